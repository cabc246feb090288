import json
import os

import numpy as np
import pytest

from lgre.cli import (DEFAULT_ALPHA_GRID, EXIT_INTEGRITY, EXIT_IO, EXIT_OK,
                      EXIT_USAGE, main, read_manifest)
from lgre.synthetic import Rule, SyntheticSpec, generate_synthetic, write_dataset

FAST = ["--dim", "8", "--epochs", "1", "--negatives", "2", "--batch-size", "8",
        "--lr", "0.01", "--alpha", "1e-5", "--seed", "3"]


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    rules = [Rule("e0", "r0", "month", f"=={m}", f"e{4 + m % 3}")
             for m in range(1, 13)]
    spec = SyntheticSpec(entities=12, relations=2, facts=300,
                         year_start=2014, year_end=2014, rules=rules,
                         unruled_fraction=0.3)
    rows, rule_list = generate_synthetic(spec, seed=0)
    return str(write_dataset(root / "ds", rows, rule_list))


def run(argv, capsys):
    code = main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestTrain:
    def test_train_writes_manifest_and_checkpoint(self, data_dir, tmp_path, capsys):
        run_dir = str(tmp_path / "run")
        code, out, _ = run(["train", "--data", data_dir, "--run-dir", run_dir,
                            "--quiet", *FAST], capsys)
        assert code == EXIT_OK
        manifest = (tmp_path / "run" / "manifest.txt").read_text()
        assert "config.alpha=1e-05" in manifest
        assert "config.dim=8" in manifest
        assert os.path.exists(os.path.join(run_dir, "checkpoint", "manifest.txt"))
        assert os.path.exists(os.path.join(run_dir, "epochs.jsonl"))

    def test_epochs_zero_checkpoints_without_records(self, data_dir, tmp_path, capsys):
        run_dir = str(tmp_path / "run0")
        code, out, _ = run(["train", "--data", data_dir, "--run-dir", run_dir,
                            "--quiet", *FAST[:-4], "--epochs", "0"], capsys)
        assert code == EXIT_OK
        assert (tmp_path / "run0" / "epochs.jsonl").read_text() == ""
        assert os.path.exists(os.path.join(run_dir, "checkpoint", "entity.f64"))

    def test_flag_beats_config_file(self, data_dir, tmp_path, capsys):
        cfg = tmp_path / "base.cfg"
        cfg.write_text("dim=16\nalpha=0.5\nepochs=0\nnegatives=2\nbatch_size=8\n")
        run_dir = str(tmp_path / "run1")
        code, _, _ = run(["train", "--data", data_dir, "--run-dir", run_dir,
                          "--config", str(cfg), "--alpha", "0.25", "--quiet"], capsys)
        assert code == EXIT_OK
        manifest = (tmp_path / "run1" / "manifest.txt").read_text()
        assert "config.alpha=0.25" in manifest
        assert "config.dim=16" in manifest

    def test_env_override_between_file_and_flag(self, data_dir, tmp_path, capsys,
                                                monkeypatch):
        cfg = tmp_path / "base.cfg"
        cfg.write_text("dim=16\nepochs=0\nnegatives=2\n")
        monkeypatch.setenv("LGRE_DIM", "24")
        run_dir = str(tmp_path / "run2")
        code, _, _ = run(["train", "--data", data_dir, "--run-dir", run_dir,
                          "--config", str(cfg), "--quiet"], capsys)
        assert code == EXIT_OK
        assert "config.dim=24" in (tmp_path / "run2" / "manifest.txt").read_text()

    def test_unknown_config_key_lists_valid_keys(self, data_dir, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("dimension=16\n")
        code, _, err = run(["train", "--data", data_dir,
                            "--run-dir", str(tmp_path / "x"),
                            "--config", str(cfg), "--quiet"], capsys)
        assert code == EXIT_USAGE
        assert "dimension" in err and "dim" in err

    def test_missing_dataset_is_io_error(self, tmp_path, capsys):
        code, _, err = run(["train", "--data", str(tmp_path / "nope"),
                            "--run-dir", str(tmp_path / "y"), "--quiet", *FAST],
                           capsys)
        assert code == EXIT_IO

    def test_existing_run_dir_fails_loudly(self, data_dir, tmp_path, capsys):
        run_dir = tmp_path / "taken"
        run_dir.mkdir()
        code, _, err = run(["train", "--data", data_dir, "--run-dir", str(run_dir),
                            "--quiet", *FAST], capsys)
        assert code == EXIT_IO
        assert "exists" in err

    def test_rerun_from_manifest_reproduces_epoch_zero(self, data_dir, tmp_path,
                                                       capsys):
        first = str(tmp_path / "a")
        code, _, _ = run(["train", "--data", data_dir, "--run-dir", first,
                          "--quiet", *FAST], capsys)
        assert code == EXIT_OK
        second = str(tmp_path / "b")
        code, _, _ = run(["train", "--from-manifest",
                          os.path.join(first, "manifest.txt"),
                          "--run-dir", second, "--quiet"], capsys)
        assert code == EXIT_OK
        rec_a = json.loads(open(os.path.join(first, "epochs.jsonl")).readline())
        rec_b = json.loads(open(os.path.join(second, "epochs.jsonl")).readline())
        assert rec_a == rec_b

    def test_manifest_roundtrip(self, data_dir, tmp_path, capsys):
        run_dir = str(tmp_path / "m")
        run(["train", "--data", data_dir, "--run-dir", run_dir, "--quiet", *FAST],
            capsys)
        cfg, data = read_manifest(os.path.join(run_dir, "manifest.txt"))
        assert cfg.dim == 8 and os.path.samefile(data, data_dir)


@pytest.fixture(scope="module")
def trained(data_dir, tmp_path_factory):
    run_dir = str(tmp_path_factory.mktemp("trained") / "run")
    assert main(["train", "--data", data_dir, "--run-dir", run_dir,
                 "--quiet", *FAST]) == EXIT_OK
    return os.path.join(run_dir, "checkpoint")


class TestEval:
    def test_eval_prints_table_and_writes_json(self, trained, data_dir, tmp_path,
                                               capsys):
        report = tmp_path / "report.json"
        code, out, _ = run(["eval", "--checkpoint", trained, "--data", data_dir,
                            "--json", str(report)], capsys)
        assert code == EXIT_OK
        assert "split=test" in out and "overall" in out
        payload = json.loads(report.read_text())
        assert set(payload["by_direction"]) == {"object", "subject"}

    def test_default_split_is_test(self, trained, data_dir, capsys):
        code, out, _ = run(["eval", "--checkpoint", trained, "--data", data_dir],
                           capsys)
        assert code == EXIT_OK and "split=test" in out

    def test_raw_mrr_at_most_filtered(self, trained, data_dir, tmp_path, capsys):
        outputs = {}
        for mode in ("raw", "time_aware"):
            path = tmp_path / f"{mode}.json"
            run(["eval", "--checkpoint", trained, "--data", data_dir,
                 "--filter", mode, "--json", str(path)], capsys)
            outputs[mode] = json.loads(path.read_text())["mrr"]
        assert outputs["raw"] <= outputs["time_aware"]

    def test_ranks_csv(self, trained, data_dir, tmp_path, capsys):
        path = tmp_path / "ranks.csv"
        code, _, _ = run(["eval", "--checkpoint", trained, "--data", data_dir,
                          "--ranks-csv", str(path)], capsys)
        assert code == EXIT_OK
        lines = path.read_text().splitlines()
        assert lines[0] == "rank,direction"
        assert len(lines) > 1

    def test_corrupt_checkpoint_is_integrity_error(self, trained, data_dir,
                                                   tmp_path, capsys):
        import shutil
        broken = str(tmp_path / "broken")
        shutil.copytree(trained, broken)
        blob = os.path.join(broken, "relation.f64")
        with open(blob, "wb") as fh:
            fh.write(b"\x00" * 8)
        code, _, err = run(["eval", "--checkpoint", broken, "--data", data_dir],
                           capsys)
        assert code == EXIT_INTEGRITY
        assert "relation" in err


class TestAblate:
    def test_table_has_all_variants(self, data_dir, tmp_path, capsys):
        run_dir = str(tmp_path / "ablate")
        code, out, _ = run(["ablate", "--data", data_dir, "--run-dir", run_dir,
                            *FAST], capsys)
        assert code == EXIT_OK
        for variant in ("full", "no_ru", "no_agb", "no_tl"):
            assert variant in out
        payload = json.loads(open(os.path.join(run_dir, "ablation.json")).read())
        assert set(payload) == {"full", "no_ru", "no_agb", "no_tl"}

    def test_no_tl_variant_logs_zero_temporal(self, data_dir, tmp_path, capsys):
        run_dir = str(tmp_path / "ablate2")
        run(["ablate", "--data", data_dir, "--run-dir", run_dir, *FAST], capsys)
        lines = open(os.path.join(run_dir, "no_tl", "epochs.jsonl")).readlines()
        assert all(json.loads(line)["temporal"] == 0.0 for line in lines)


class TestSweep:
    def test_single_value_grid(self, data_dir, tmp_path, capsys):
        run_dir = str(tmp_path / "sweep1")
        code, out, _ = run(["sweep-alpha", "--data", data_dir, "--run-dir", run_dir,
                            "--alphas", "1e-4", *FAST], capsys)
        assert code == EXIT_OK
        assert out.count("<- best") == 1
        payload = json.loads(open(os.path.join(run_dir, "sweep.json")).read())
        assert len(payload["rows"]) == 1

    def test_rows_match_grid_size(self, data_dir, tmp_path, capsys):
        run_dir = str(tmp_path / "sweep3")
        code, out, _ = run(["sweep-alpha", "--data", data_dir, "--run-dir", run_dir,
                            "--alphas", "0,1e-4,1e-2", *FAST], capsys)
        assert code == EXIT_OK
        payload = json.loads(open(os.path.join(run_dir, "sweep.json")).read())
        assert len(payload["rows"]) == 3

    def test_empty_grid_is_usage_error(self, data_dir, tmp_path, capsys):
        code, _, err = run(["sweep-alpha", "--data", data_dir,
                            "--run-dir", str(tmp_path / "sweep2"),
                            "--alphas", "", *FAST], capsys)
        assert code == EXIT_USAGE

    def test_alpha_zero_matches_no_tl_ablation(self, data_dir, tmp_path, capsys):
        sweep_dir = str(tmp_path / "sweep4")
        run(["sweep-alpha", "--data", data_dir, "--run-dir", sweep_dir,
             "--alphas", "0", *FAST], capsys)
        ablate_dir = str(tmp_path / "ablate4")
        run(["ablate", "--data", data_dir, "--run-dir", ablate_dir, *FAST], capsys)
        sweep_first = json.loads(open(
            os.path.join(sweep_dir, "alpha=0", "epochs.jsonl")).readline())
        ablate_first = json.loads(open(
            os.path.join(ablate_dir, "no_tl", "epochs.jsonl")).readline())
        assert sweep_first["total"] == ablate_first["total"]

    def test_default_grid_matches_documented_values(self):
        assert DEFAULT_ALPHA_GRID == (1e-5, 5e-5, 1e-4, 5e-4, 1e-3, 5e-3,
                                      1e-2, 5e-2, 0.1)


class TestSynth:
    def write_spec(self, path):
        path.write_text("entities=15\nrelations=2\nfacts=100\n"
                        "year_start=2014\nyear_end=2014\n"
                        "rule=e0|r0|month|==3|e7\n")
        return str(path)

    def test_synth_writes_files(self, tmp_path, capsys):
        spec = self.write_spec(tmp_path / "spec.txt")
        out_dir = tmp_path / "out"
        code, _, _ = run(["synth", "--spec", spec, "--out", str(out_dir)], capsys)
        assert code == EXIT_OK
        for name in ("train.txt", "valid.txt", "test.txt", "rules.txt"):
            assert (out_dir / name).exists()
        for line in (out_dir / "train.txt").read_text().splitlines():
            s, r, o, ts = line.split("\t")
            if s == "e0" and r == "r0" and ts.split("-")[1] == "03":
                assert o == "e7"

    def test_same_seed_byte_identical(self, tmp_path, capsys):
        spec = self.write_spec(tmp_path / "spec.txt")
        for name in ("a", "b"):
            assert main(["synth", "--spec", spec, "--out", str(tmp_path / name),
                         "--seed", "9"]) == EXIT_OK
        for fname in ("train.txt", "valid.txt", "test.txt", "rules.txt"):
            assert (tmp_path / "a" / fname).read_bytes() == \
                (tmp_path / "b" / fname).read_bytes()

    def test_split_proportions(self, tmp_path, capsys):
        spec = self.write_spec(tmp_path / "spec.txt")
        main(["synth", "--spec", spec, "--out", str(tmp_path / "c")])
        counts = {name: len((tmp_path / "c" / f"{name}.txt").read_text().splitlines())
                  for name in ("train", "valid", "test")}
        total = sum(counts.values())
        assert total == 100
        assert abs(counts["train"] - 80) <= 1
        assert abs(counts["valid"] - 10) <= 1

    def test_contradictory_rules_fail_with_pair(self, tmp_path, capsys):
        spec = tmp_path / "bad.txt"
        spec.write_text("entities=15\nrelations=2\nfacts=50\n"
                        "year_start=2014\nyear_end=2014\n"
                        "rule=e0|r0|month|==3|e7\n"
                        "rule=e0|r0|day|%1==0|e8\n")
        code, _, err = run(["synth", "--spec", str(spec),
                            "--out", str(tmp_path / "d")], capsys)
        assert code == EXIT_USAGE
        assert "e7" in err and "e8" in err


class TestExportAndBench:
    def test_export_weights_cli(self, data_dir, tmp_path, capsys):
        run_dir = str(tmp_path / "run")
        main(["train", "--data", data_dir, "--run-dir", run_dir, "--quiet", *FAST])
        out = tmp_path / "w.csv"
        code, _, _ = run(["export-weights", "--checkpoint",
                          os.path.join(run_dir, "checkpoint"),
                          "--data", data_dir, "--split", "valid",
                          "--out", str(out)], capsys)
        assert code == EXIT_OK
        lines = out.read_text().splitlines()
        n_valid = len(open(os.path.join(data_dir, "valid.txt")).readlines())
        assert len(lines) == 1 + 2 * n_valid + 1  # header + rows + mean footer

    def test_bench_cli(self, data_dir, tmp_path, capsys):
        report = tmp_path / "bench.json"
        code, out, _ = run(["bench", "--data", data_dir, "--steps", "1",
                            "--json", str(report), "--dim", "8",
                            "--negatives", "2"], capsys)
        assert code == EXIT_OK
        assert "growth exponent" in out and "parameter count" in out
        payload = json.loads(report.read_text())
        assert [r["batch_size"] for r in payload["rows"]] == [64, 128, 256, 512]
