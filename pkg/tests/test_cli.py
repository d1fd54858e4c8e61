import numpy as np
import pytest

from pnpcert import Image, load_pgm, save_pgm
from pnpcert.cli import (
    EXIT_CONFIG,
    EXIT_DIVERGENCE,
    EXIT_IO,
    EXIT_OK,
    ConfigError,
    ExperimentConfig,
    main,
    parse_config,
)

from conftest import synthetic_image


def write_truth(tmp_path, rows=16, cols=16):
    path = tmp_path / "truth.pgm"
    save_pgm(synthetic_image(rows, cols), path)
    return path


def write_config(tmp_path, **over):
    values = {
        "task": "deblur",
        "image": str(tmp_path / "truth.pgm"),
        "crop": 0,
        "seed": 3,
        "noise_sigma": 0.02,
        "kernel_size": 5,
        "kernel_sigma": 1.0,
        "mask_fraction": 0.3,
        "denoiser": "dsg",
        "patch_radius": 1,
        "window_radius": 2,
        "bandwidth": 0.15,
        "window_shape": "hat",
        "algorithm": "pnp_fista",
        "schedule": "beck",
        "gamma": 0.9,
        "max_iter": 60,
        "out": str(tmp_path / "out"),
    }
    values.update(over)
    lines = [f"{k} = {v}" for k, v in values.items() if v is not None]
    path = tmp_path / "exp.cfg"
    path.write_text("# test configuration\n" + "\n".join(lines) + "\n")
    return path


class TestParseConfig:
    def test_defaults_and_overrides(self, tmp_path):
        write_truth(tmp_path)
        cfg = parse_config(write_config(tmp_path))
        assert cfg.task == "deblur"
        assert cfg.kernel_size == 5
        assert cfg.stop_tol == 1e-9  # untouched default

    def test_unknown_key_named(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("gamm = 0.9\n")
        with pytest.raises(ConfigError, match="gamm"):
            parse_config(path)

    def test_duplicate_key(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("seed = 1\nseed = 2\n")
        with pytest.raises(ConfigError, match="duplicate"):
            parse_config(path)

    def test_bad_value(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("max_iter = soon\n")
        with pytest.raises(ConfigError, match="max_iter"):
            parse_config(path)

    def test_range_validation(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("mask_fraction = 1.5\n")
        with pytest.raises(ConfigError, match="mask_fraction"):
            parse_config(path)

    def test_lambda_key_maps(self, tmp_path):
        path = tmp_path / "ok.cfg"
        path.write_text("lambda = 2.5\n")
        assert parse_config(path).lam == 2.5

    def test_comments_and_blanks(self, tmp_path):
        path = tmp_path / "ok.cfg"
        path.write_text("\n# full line\nseed = 7  # trailing\n\n")
        assert parse_config(path).seed == 7


class TestRun:
    def test_deblur_artifacts(self, tmp_path, capsys):
        write_truth(tmp_path)
        cfg_path = write_config(tmp_path)
        assert main(["run", "--config", str(cfg_path)]) == EXIT_OK
        out = tmp_path / "out"
        for name in ("recon.pgm", "recon.npy", "trace.csv", "summary.txt",
                     "guide.pgm", "observed.pgm"):
            assert (out / name).exists()
        summary = dict(
            line.split("=", 1) for line in (out / "summary.txt").read_text().splitlines()
        )
        assert summary["task"] == "deblur"
        assert "psnr_observed" in summary
        assert float(summary["psnr_recon"]) > 0

    def test_inpaint_writes_mask(self, tmp_path):
        write_truth(tmp_path)
        cfg_path = write_config(tmp_path, task="inpaint")
        assert main(["run", "--config", str(cfg_path)]) == EXIT_OK
        assert (tmp_path / "out" / "mask.pgm").exists()

    def test_deterministic_artifacts(self, tmp_path):
        write_truth(tmp_path)
        cfg_path = write_config(tmp_path)
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        assert main(["run", "--config", str(cfg_path), "--out", str(out_a)]) == EXIT_OK
        assert main(["run", "--config", str(cfg_path), "--out", str(out_b)]) == EXIT_OK
        for name in ("recon.pgm", "trace.csv", "summary.txt"):
            assert (out_a / name).read_bytes() == (out_b / name).read_bytes()

    def test_ref_limit_column(self, tmp_path):
        write_truth(tmp_path)
        cfg_path = write_config(tmp_path, max_iter=20)
        ref = tmp_path / "ref.npy"
        np.save(ref, np.zeros(256))
        assert main(["run", "--config", str(cfg_path), "--ref-limit", str(ref)]) == EXIT_OK
        first = (tmp_path / "out" / "trace.csv").read_text().splitlines()[1]
        assert first.split(",")[3] != ""

    def test_unknown_key_exit_code(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("gamm = 0.9\n")
        assert main(["run", "--config", str(path)]) == EXIT_CONFIG

    def test_missing_image_is_io_error(self, tmp_path):
        cfg_path = write_config(tmp_path)  # truth.pgm never written
        assert main(["run", "--config", str(cfg_path)]) == EXIT_IO

    def test_divergent_gamma_exit_code(self, tmp_path):
        write_truth(tmp_path)
        cfg_path = write_config(tmp_path, task="inpaint", gamma=5000.0, max_iter=500)
        assert main(["run", "--config", str(cfg_path)]) == EXIT_DIVERGENCE

    def test_missing_required_key(self, tmp_path):
        path = tmp_path / "bare.cfg"
        path.write_text("seed = 1\n")
        assert main(["run", "--config", str(path)]) == EXIT_CONFIG

    def test_red_algorithm_runs(self, tmp_path):
        write_truth(tmp_path)
        cfg_path = write_config(tmp_path, algorithm="red_apg", max_iter=30)
        assert main(["run", "--config", str(cfg_path)]) == EXIT_OK

    def test_scaled_algorithm_runs(self, tmp_path):
        write_truth(tmp_path)
        cfg_path = write_config(tmp_path, algorithm="scaled_pnp_fista",
                                denoiser="nlm", max_iter=30)
        assert main(["run", "--config", str(cfg_path)]) == EXIT_OK

    def test_deblur_64_improves_psnr(self, tmp_path):
        write_truth(tmp_path, 64, 64)
        cfg_path = write_config(tmp_path, crop=64, kernel_size=25, kernel_sigma=1.6,
                                noise_sigma=0.03, max_iter=300, patch_radius=2,
                                window_radius=5, bandwidth=0.1)
        assert main(["run", "--config", str(cfg_path)]) == EXIT_OK
        summary = dict(
            line.split("=", 1)
            for line in (tmp_path / "out" / "summary.txt").read_text().splitlines()
        )
        assert float(summary["psnr_recon"]) > float(summary["psnr_observed"])

    def test_init_independence_through_cli(self, tmp_path):
        write_truth(tmp_path)
        out_a, out_b = tmp_path / "za", tmp_path / "zb"
        for out, init in ((out_a, "zeros"), (out_b, "random")):
            cfg_path = write_config(tmp_path, task="inpaint", init=init,
                                    max_iter=20000, out=str(out))
            assert main(["run", "--config", str(cfg_path)]) == EXIT_OK
        a = np.load(out_a / "recon.npy")
        b = np.load(out_b / "recon.npy")
        assert np.linalg.norm(a - b) / np.linalg.norm(a) <= 1e-6

    def test_certified_row_implies_convergent_run(self, tmp_path):
        write_truth(tmp_path)
        cfg_path = write_config(tmp_path, task="inpaint", gamma=0.75,
                                max_iter=20000)
        assert main(["certify", "--config", str(cfg_path), "--grid", "0.75"]) == EXIT_OK
        row = (tmp_path / "out" / "certify.csv").read_text().splitlines()[1]
        assert row.split(",")[5] == "true"
        assert main(["run", "--config", str(cfg_path)]) == EXIT_OK
        summary = dict(
            line.split("=", 1)
            for line in (tmp_path / "out" / "summary.txt").read_text().splitlines()
        )
        assert summary["converged"] == "true"


class TestCertify:
    def test_sweep_csv(self, tmp_path):
        write_truth(tmp_path)
        cfg_path = write_config(tmp_path, task="inpaint")
        code = main(["certify", "--config", str(cfg_path), "--grid", "0.25,0.75",
                     "--power-tol", "1e-9"])
        assert code == EXIT_OK
        lines = (tmp_path / "out" / "certify.csv").read_text().splitlines()
        assert lines[0] == "task,denoiser_mode,gamma_or_invL,rho_P,rho_R,certified"
        assert len(lines) == 3
        for line in lines[1:]:
            fields = line.split(",")
            assert fields[0] == "inpaint"
            assert fields[5] in ("true", "false")
            assert 0.0 <= float(fields[4])
        reports = list((tmp_path / "out" / "reports").glob("*.txt"))
        assert len(reports) == 2
        assert "rho_P=" in reports[0].read_text()

    def test_empty_grid_rejected(self, tmp_path):
        write_truth(tmp_path)
        cfg_path = write_config(tmp_path)
        assert main(["certify", "--config", str(cfg_path), "--grid", " ,"]) == EXIT_CONFIG

    def test_red_grid_validated(self, tmp_path):
        write_truth(tmp_path)
        cfg_path = write_config(tmp_path, algorithm="red_apg")
        code = main(["certify", "--config", str(cfg_path), "--grid", "1.5"])
        assert code == EXIT_CONFIG


class TestSchedules:
    def test_two_schedules(self, tmp_path):
        write_truth(tmp_path)
        cfg_path = write_config(tmp_path, task="inpaint", max_iter=400)
        code = main([
            "schedules", "--config", str(cfg_path),
            "--schedules", "beck,constant(0)", "--ref-iters", "600",
        ])
        assert code == EXIT_OK
        out = tmp_path / "out"
        assert (out / "reference.npy").exists()
        for name in ("schedule_beck.csv", "schedule_constant_0.csv"):
            lines = (out / name).read_text().splitlines()
            assert lines[0] == "k,alpha,step_norm,dist_to_ref,psnr"
            last = lines[-1].split(",")
            first = lines[1].split(",")
            assert float(last[3]) < float(first[3])  # distance decayed

    def test_zero_ref_iters_rejected(self, tmp_path):
        write_truth(tmp_path)
        cfg_path = write_config(tmp_path)
        code = main(["schedules", "--config", str(cfg_path),
                     "--schedules", "beck", "--ref-iters", "0"])
        assert code == EXIT_CONFIG

    def test_empty_schedule_list_rejected(self, tmp_path):
        write_truth(tmp_path)
        cfg_path = write_config(tmp_path)
        code = main(["schedules", "--config", str(cfg_path),
                     "--schedules", ",", "--ref-iters", "10"])
        assert code == EXIT_CONFIG


class TestDenoise:
    def test_constant_preserved(self, tmp_path):
        img = Image(np.full(64, 0.5), 8, 8)
        save_pgm(img, tmp_path / "x.pgm")
        save_pgm(img, tmp_path / "g.pgm")
        out = tmp_path / "y.pgm"
        code = main(["denoise", "--image", str(tmp_path / "x.pgm"),
                     "--guide", str(tmp_path / "g.pgm"), "--out", str(out)])
        assert code == EXIT_OK
        back = load_pgm(out)
        assert np.abs(back.data - 0.5).max() <= 1.0 / 510 + 1e-12

    def test_improves_noisy_ramp(self, tmp_path):
        from pnpcert import Rng, gaussian_noise, psnr

        clean = synthetic_image(16, 16)
        noisy_data = clean.data + gaussian_noise(Rng(5), 256, 0.08)
        noisy = Image(np.clip(noisy_data, 0, 1), 16, 16)
        save_pgm(noisy, tmp_path / "x.pgm")
        save_pgm(clean, tmp_path / "g.pgm")
        out = tmp_path / "y.pgm"
        code = main(["denoise", "--image", str(tmp_path / "x.pgm"),
                     "--guide", str(tmp_path / "g.pgm"), "--out", str(out)])
        assert code == EXIT_OK
        denoised = load_pgm(out)
        assert psnr(denoised, clean) > psnr(noisy, clean)

    def test_dimension_mismatch(self, tmp_path):
        save_pgm(Image(np.zeros(64), 8, 8), tmp_path / "x.pgm")
        save_pgm(Image(np.zeros(16), 4, 4), tmp_path / "g.pgm")
        code = main(["denoise", "--image", str(tmp_path / "x.pgm"),
                     "--guide", str(tmp_path / "g.pgm"),
                     "--out", str(tmp_path / "y.pgm")])
        assert code == EXIT_CONFIG

    def test_single_pixel_rejected(self, tmp_path):
        save_pgm(Image(np.zeros(1), 1, 1), tmp_path / "x.pgm")
        save_pgm(Image(np.zeros(1), 1, 1), tmp_path / "g.pgm")
        code = main(["denoise", "--image", str(tmp_path / "x.pgm"),
                     "--guide", str(tmp_path / "g.pgm"),
                     "--out", str(tmp_path / "y.pgm")])
        assert code == EXIT_CONFIG


class TestCenterCrop:
    def test_crop_applies(self, tmp_path):
        write_truth(tmp_path, 20, 24)
        cfg_path = write_config(tmp_path, crop=16, max_iter=5)
        assert main(["run", "--config", str(cfg_path)]) == EXIT_OK
        recon = load_pgm(tmp_path / "out" / "recon.pgm")
        assert (recon.rows, recon.cols) == (16, 16)

    def test_crop_zero_keeps_size(self, tmp_path):
        write_truth(tmp_path, 16, 16)
        cfg_path = write_config(tmp_path, crop=0, max_iter=5)
        assert main(["run", "--config", str(cfg_path)]) == EXIT_OK
        recon = load_pgm(tmp_path / "out" / "recon.pgm")
        assert (recon.rows, recon.cols) == (16, 16)
