import numpy as np
import pytest

from kvchannel.cli.bundle import save_bundle
from kvchannel.cli.config import CSV_COLUMNS, ExperimentConfig
from kvchannel.cli.main import main
from kvchannel.cli.runner import csv_text, emit_csv, run_experiment, run_sweep
from kvchannel.cli.synth import generate_head, generate_synthetic, heads_to_tensors
from kvchannel.saliency import SaliencyMatrix, mean_query, saliency


def small_config(**kw):
    base = dict(seq_len=48, head_dim=16, heads=2, window=8, decode_steps=4, seed=3)
    base.update(kw)
    return ExperimentConfig(**base)


class TestGenerator:
    def test_same_seed_bit_identical(self):
        a = generate_synthetic(small_config())
        b = generate_synthetic(small_config())
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.K, y.K)
            np.testing.assert_array_equal(x.q_window, y.q_window)
            np.testing.assert_array_equal(x.decode_v, y.decode_v)

    def test_heterogeneity_off_plain_gaussian(self):
        cfg = small_config(seq_len=512, channel_heterogeneity=False)
        d = generate_head(cfg, 0)
        assert abs(float(d.K.mean())) < 0.05
        assert abs(float(d.K.std()) - 1.0) < 0.05

    def test_heterogeneity_spreads_channel_saliency(self):
        cfg = small_config(seq_len=128, head_dim=32)
        d = generate_head(cfg, 0)
        w = saliency(mean_query(d.q_window), d.K)
        col_means = w.scores.mean(axis=0, dtype=np.float64)
        assert col_means.max() / col_means.min() > 10.0

    def test_heads_differ(self):
        heads = generate_synthetic(small_config())
        assert np.any(heads[0].K != heads[1].K)


class TestRunExperiment:
    def test_identity_config_zero_error(self):
        row = run_experiment(small_config(lambda_k=0.0, lambda_v=0.0))
        assert row.output_mse < 1e-10
        assert row.output_max_abs < 1e-5
        assert row.reduction_fraction == 0.0
        assert row.attn_logit_frobenius_error == 0.0
        assert row.achieved_overall_ratio == 0.0

    def test_pruned_run_reduces_memory(self):
        row = run_experiment(small_config(lambda_k=0.5))
        assert row.kv_bytes_compressed < row.kv_bytes_full
        assert 0.0 < row.reduction_fraction < 1.0
        assert row.wall_time_ms > 0.0

    def test_achieved_ratio_matches_independent_recompute(self):
        cfg = small_config(lambda_k=0.5)
        row = run_experiment(cfg)
        total_kept = 0
        total_slots = 0
        for h, data in enumerate(generate_synthetic(cfg)):
            from kvchannel.saliency import select_fixed

            prefix = cfg.seq_len - cfg.window
            w = saliency(mean_query(data.q_window), data.K[:prefix])
            mask = select_fixed(w, 0.5)
            total_kept += int(mask.kept_count.sum())
            total_slots += prefix * cfg.head_dim
        assert row.achieved_overall_ratio == pytest.approx(1 - total_kept / total_slots)

    def test_eviction_composes(self):
        row = run_experiment(
            small_config(eviction="snapkv", kv_budget=24, pool_kernel=7, lambda_k=0.5)
        )
        base = run_experiment(small_config(lambda_k=0.5))
        assert row.kv_bytes_compressed < base.kv_bytes_compressed

    def test_strategies_run(self):
        for kw in (
            dict(strategy="top_p", top_p=0.99),
            dict(strategy="grouped", groups=4, group_ratios=(0.25, 0.5, 0.75, 1.0)),
            dict(dist="normal"),
            dict(dist="exponential"),
            dict(eviction="streaming", sinks=4, recent=16),
        ):
            row = run_experiment(small_config(**kw))
            assert np.isfinite(row.output_mse)

    def test_head_count_mismatch_rejected(self):
        cfg = small_config()
        heads = generate_synthetic(cfg)
        with pytest.raises(ValueError):
            run_experiment(cfg.replace(heads=3), heads)

    def test_invalid_config_rejected(self):
        with pytest.raises(ValueError):
            run_experiment(small_config(window=100))
        with pytest.raises(ValueError):
            run_experiment(small_config(lambda_k=1.0))


class TestSweepAndCsv:
    def test_reduction_monotone_in_lambda(self):
        lams = (0.0, 0.25, 0.5, 0.75)
        rows = run_sweep(small_config(decode_steps=1), lams)
        reductions = [r.reduction_fraction for r in rows]
        assert reductions == sorted(reductions)

    def test_csv_deterministic(self):
        cfg = small_config(dist="normal")
        a = csv_text([run_experiment(cfg)])
        b = csv_text([run_experiment(cfg)])
        assert a == b

    def test_csv_shape_and_reparse(self, tmp_path):
        rows = run_sweep(small_config(decode_steps=1), (0.0, 0.5))
        path = tmp_path / "out.csv"
        emit_csv(rows, path)
        text = path.read_text(encoding="utf-8")
        lines = text.splitlines()
        assert lines[0] == ",".join(CSV_COLUMNS)
        assert len(lines) == 3
        assert text.endswith("\n") and "\r" not in text
        for line, row in zip(lines[1:], rows):
            fields = dict(zip(CSV_COLUMNS, line.split(",")))
            assert float(fields["output_mse"]) == pytest.approx(row.output_mse, rel=1e-5, abs=1e-12)
            assert float(fields["reduction_fraction"]) == pytest.approx(
                row.reduction_fraction, rel=1e-5
            )
            assert int(fields["seq_len"]) == row.config.seq_len
            assert fields["strategy"] == row.config.strategy

    def test_empty_rows_rejected(self):
        with pytest.raises(ValueError):
            csv_text([])


class TestMainEntry:
    def run_main(self, *argv):
        return main(list(argv))

    def test_success_stdout(self, capsys):
        code = self.run_main("--seq-len", "48", "--head-dim", "16", "--window", "8",
                             "--decode-steps", "2", "--seed", "5")
        captured = capsys.readouterr()
        assert code == 0
        assert captured.out.startswith(",".join(CSV_COLUMNS)[:20])

    def test_config_error_exit_one(self, capsys):
        assert self.run_main("--lambda-k", "1.5") == 1
        assert self.run_main("--strategy", "bogus") == 1
        assert self.run_main("--seq-len", "ten") == 1

    def test_missing_input_exit_two(self, capsys):
        assert self.run_main("--input", "/nonexistent/path.spkv") == 2

    def test_corrupt_input_exit_two(self, tmp_path, capsys):
        path = tmp_path / "bad.spkv"
        path.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
        assert self.run_main("--input", str(path)) == 2

    def test_unwritable_output_exit_two(self, tmp_path, capsys):
        assert (
            self.run_main(
                "--seq-len", "48", "--head-dim", "16", "--window", "8",
                "--decode-steps", "1", "--output", str(tmp_path / "no" / "dir" / "x.csv"),
            )
            == 2
        )

    def test_bundle_input_matches_in_memory_run(self, tmp_path, capsys):
        cfg = small_config(decode_steps=2)
        heads = generate_synthetic(cfg)
        path = tmp_path / "in.spkv"
        save_bundle(path, heads_to_tensors(heads))
        out_path = tmp_path / "out.csv"
        code = self.run_main(
            "--input", str(path), "--output", str(out_path),
            "--lambda-k", "0.5", "--seed", "3",
        )
        assert code == 0
        want = csv_text([run_experiment(cfg.replace(lambda_k=0.5), heads)])
        assert out_path.read_text(encoding="utf-8") == want

    def test_sweep_flag(self, tmp_path):
        out_path = tmp_path / "sweep.csv"
        code = self.run_main(
            "--seq-len", "48", "--head-dim", "16", "--window", "8", "--decode-steps", "1",
            "--sweep", "0.0,0.5", "--output", str(out_path),
        )
        assert code == 0
        assert len(out_path.read_text().splitlines()) == 3

    def test_cli_run_twice_identical_bytes(self, tmp_path):
        args = (
            "--seq-len", "48", "--head-dim", "16", "--window", "8",
            "--decode-steps", "2", "--lambda-k", "0.8", "--dist", "degenerate",
        )
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        assert self.run_main(*args, "--output", str(p1)) == 0
        assert self.run_main(*args, "--output", str(p2)) == 0
        assert p1.read_bytes() == p2.read_bytes()
