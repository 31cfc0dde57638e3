import csv
import json

import numpy as np
import pytest

from conftest import make_topic
from tarstop.cli import main
from tarstop.corpus import assemble_topics, load_qrels, load_run, synth_topics, write_qrels_file, write_run_file

FAST_TRAIN = ["--timesteps", "200", "--n-steps", "10", "--n-envs", "2", "--minibatch-size", "20"]


@pytest.fixture
def collection(tmp_path):
    out = tmp_path / "data"
    assert main(["synth", "--out", str(out), "--count", "4", "--docs", "60",
                 "--prevalence", "0.2", "--decay", "12", "--seed", "3"]) == 0
    return out / "synthetic.run", out / "synthetic.qrels"


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(row for row in fh if not row.startswith("#")))


class TestSynth:
    def test_files_reparse_to_the_generated_topics(self, tmp_path, collection):
        run_path, qrels_path = collection
        topics = assemble_topics(load_run(run_path), load_qrels(qrels_path))
        reference = synth_topics(4, 60, 0.2, 12.0, seed=3)
        assert len(topics) == len(reference)
        for parsed, original in zip(topics, reference):
            assert parsed.topic_id == original.topic_id
            assert parsed.ranking == original.ranking
            assert np.array_equal(parsed.labels, original.labels)

    def test_seed_changes_files(self, tmp_path):
        for seed in ("1", "2"):
            assert main(["synth", "--out", str(tmp_path / seed), "--count", "2",
                         "--docs", "30", "--seed", seed]) == 0
        a = (tmp_path / "1" / "synthetic.qrels").read_bytes()
        b = (tmp_path / "2" / "synthetic.qrels").read_bytes()
        assert a != b

    def test_zero_count_is_a_config_error(self, tmp_path):
        assert main(["synth", "--out", str(tmp_path / "x"), "--count", "0"]) == 2


class TestTrain:
    def test_one_target_one_checkpoint(self, tmp_path, collection):
        run_path, qrels_path = collection
        out = tmp_path / "model"
        code = main(["train", "--run", str(run_path), "--qrels", str(qrels_path),
                     "--out", str(out), "--target", "0.9", "--batches", "6",
                     "--seed", "0", *FAST_TRAIN])
        assert code == 0
        assert (out / "policy-t0.9.json").is_file()
        assert (out / "train-log-t0.9.csv").is_file()
        assert len(list(out.glob("policy-*.json"))) == 1

    def test_three_targets_three_checkpoints(self, tmp_path, collection):
        run_path, qrels_path = collection
        out = tmp_path / "model"
        code = main(["train", "--run", str(run_path), "--qrels", str(qrels_path),
                     "--out", str(out), "--target", "0.8", "--target", "0.9",
                     "--target", "1.0", "--batches", "6", "--seed", "0", *FAST_TRAIN])
        assert code == 0
        assert sorted(p.name for p in out.glob("policy-*.json")) == [
            "policy-t0.8.json", "policy-t0.9.json", "policy-t1.json",
        ]

    def test_missing_qrels_exits_2(self, tmp_path, collection):
        run_path, _ = collection
        assert main(["train", "--run", str(run_path), "--qrels", str(tmp_path / "nope.qrels"),
                     "--out", str(tmp_path / "m"), "--target", "0.9", *FAST_TRAIN]) == 2

    def test_identical_runs_are_byte_identical(self, tmp_path, collection):
        run_path, qrels_path = collection
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert main(["train", "--run", str(run_path), "--qrels", str(qrels_path),
                         "--out", str(out), "--target", "0.9", "--batches", "6",
                         "--seed", "11", *FAST_TRAIN]) == 0
            outs.append(out)
        assert (outs[0] / "policy-t0.9.json").read_bytes() == (outs[1] / "policy-t0.9.json").read_bytes()
        assert (outs[0] / "train-log-t0.9.csv").read_bytes() == (outs[1] / "train-log-t0.9.csv").read_bytes()

    def test_config_file_defaults_and_cli_precedence(self, tmp_path, collection):
        run_path, qrels_path = collection
        config = tmp_path / "config.json"
        config.write_text(json.dumps({
            "seed": 11, "batches": 6, "timesteps": 200, "n_steps": 10,
            "n_envs": 2, "minibatch_size": 20, "target": [0.9],
        }))
        out_config = tmp_path / "from-config"
        assert main(["train", "--run", str(run_path), "--qrels", str(qrels_path),
                     "--out", str(out_config), "--config", str(config)]) == 0
        out_flags = tmp_path / "from-flags"
        assert main(["train", "--run", str(run_path), "--qrels", str(qrels_path),
                     "--out", str(out_flags), "--target", "0.9", "--batches", "6",
                     "--seed", "11", *FAST_TRAIN]) == 0
        assert (out_config / "policy-t0.9.json").read_bytes() == (out_flags / "policy-t0.9.json").read_bytes()
        # a CLI flag overrides the config value
        out_override = tmp_path / "override"
        assert main(["train", "--run", str(run_path), "--qrels", str(qrels_path),
                     "--out", str(out_override), "--config", str(config), "--seed", "12"]) == 0
        assert (out_override / "policy-t0.9.json").read_bytes() != (out_config / "policy-t0.9.json").read_bytes()


@pytest.fixture
def trained(tmp_path, collection):
    run_path, qrels_path = collection
    out = tmp_path / "model"
    assert main(["train", "--run", str(run_path), "--qrels", str(qrels_path),
                 "--out", str(out), "--target", "0.9", "--batches", "6",
                 "--seed", "0", *FAST_TRAIN]) == 0
    return run_path, qrels_path, out / "policy-t0.9.json"


class TestStop:
    def test_greedy_runs_are_identical(self, tmp_path, trained):
        run_path, qrels_path, ckpt = trained
        outs = []
        for name in ("a.csv", "b.csv"):
            out = tmp_path / name
            assert main(["stop", "--checkpoint", str(ckpt), "--run", str(run_path),
                         "--qrels", str(qrels_path), "--out", str(out)]) == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]

    def test_sample_mode_is_seeded(self, tmp_path, trained):
        run_path, qrels_path, ckpt = trained
        outs = []
        for name in ("a.csv", "b.csv"):
            out = tmp_path / name
            assert main(["stop", "--checkpoint", str(ckpt), "--run", str(run_path),
                         "--qrels", str(qrels_path), "--out", str(out),
                         "--mode", "sample", "--seed", "4"]) == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]

    def test_batch_mismatch_exits_2(self, tmp_path, trained):
        run_path, qrels_path, ckpt = trained
        assert main(["stop", "--checkpoint", str(ckpt), "--run", str(run_path),
                     "--qrels", str(qrels_path), "--out", str(tmp_path / "x.csv"),
                     "--batches", "50"]) == 2

    def test_qrels_only_topic_warns(self, tmp_path, trained, caplog):
        run_path, qrels_path, ckpt = trained
        extra_qrels = tmp_path / "extra.qrels"
        extra_qrels.write_text(qrels_path.read_text() + "ghost 0 gdoc 1\n")
        with caplog.at_level("WARNING"):
            assert main(["stop", "--checkpoint", str(ckpt), "--run", str(run_path),
                         "--qrels", str(extra_qrels), "--out", str(tmp_path / "x.csv")]) == 0
        assert "ghost" in caplog.text
        rows = read_rows(tmp_path / "x.csv")
        assert all(r["topic_id"] != "ghost" for r in rows)


class TestBaseline:
    def test_oracle_has_zero_excess_after_eval(self, tmp_path, collection):
        run_path, qrels_path = collection
        oracle_csv = tmp_path / "oracle.csv"
        assert main(["baseline", "--method", "oracle", "--run", str(run_path),
                     "--qrels", str(qrels_path), "--out", str(oracle_csv),
                     "--target", "0.9"]) == 0
        out = tmp_path / "report"
        assert main(["eval", "--results", str(oracle_csv), "--run", str(run_path),
                     "--qrels", str(qrels_path), "--out", str(out)]) == 0
        rows = read_rows(out / "per_topic.csv")
        assert rows
        assert all(float(r["excess"]) == 0.0 for r in rows)

    def test_full_budget_reaches_full_recall(self, tmp_path, collection):
        run_path, qrels_path = collection
        budget_csv = tmp_path / "budget.csv"
        assert main(["baseline", "--method", "budget", "--fraction", "1.0",
                     "--run", str(run_path), "--qrels", str(qrels_path),
                     "--out", str(budget_csv), "--target", "0.9"]) == 0
        out = tmp_path / "report"
        assert main(["eval", "--results", str(budget_csv), "--run", str(run_path),
                     "--qrels", str(qrels_path), "--out", str(out)]) == 0
        assert all(float(r["recall"]) == 1.0 for r in read_rows(out / "per_topic.csv"))

    def test_knee_reads_everything_on_straight_line_gain(self, tmp_path):
        labels = np.zeros(100, dtype=int)
        labels[::2] = 1
        topic = make_topic(labels, topic_id="flat")
        run_path = tmp_path / "flat.run"
        qrels_path = tmp_path / "flat.qrels"
        write_run_file(run_path, [topic])
        write_qrels_file(qrels_path, [topic])
        knee_csv = tmp_path / "knee.csv"
        assert main(["baseline", "--method", "knee", "--run", str(run_path),
                     "--qrels", str(qrels_path), "--out", str(knee_csv),
                     "--target", "0.9", "--batches", "100"]) == 0
        rows = read_rows(knee_csv)
        assert rows[0]["docs_examined"] == "100"


class TestEval:
    def test_joint_report_shape(self, tmp_path, trained):
        run_path, qrels_path, ckpt = trained
        policy_csv = tmp_path / "policy.csv"
        oracle_csv = tmp_path / "oracle.csv"
        assert main(["stop", "--checkpoint", str(ckpt), "--run", str(run_path),
                     "--qrels", str(qrels_path), "--out", str(policy_csv)]) == 0
        assert main(["baseline", "--method", "oracle", "--run", str(run_path),
                     "--qrels", str(qrels_path), "--out", str(oracle_csv),
                     "--target", "0.9"]) == 0
        out = tmp_path / "report"
        assert main(["eval", "--results", str(policy_csv), "--results", str(oracle_csv),
                     "--run", str(run_path), "--qrels", str(qrels_path),
                     "--out", str(out)]) == 0
        agg = read_rows(out / "aggregate.csv")
        assert {r["method"] for r in agg} == {"policy", "oracle"}
        assert all(r["target"] == "0.9" for r in agg)

    def test_external_minimal_csv_is_stamped_with_targets(self, tmp_path, collection):
        run_path, qrels_path = collection
        external = tmp_path / "external.csv"
        external.write_text("topic_id,method,docs_examined\nsynth-0000,sampler,30\n")
        out = tmp_path / "report"
        assert main(["eval", "--results", str(external), "--run", str(run_path),
                     "--qrels", str(qrels_path), "--out", str(out),
                     "--target", "0.8", "--target", "0.9"]) == 0
        rows = read_rows(out / "per_topic.csv")
        assert {r["target"] for r in rows} == {"0.8", "0.9"}
        assert all(r["method"] == "sampler" for r in rows)
        assert all(r["relevant_found"] != "" for r in rows)

    def test_external_rows_without_target_need_the_flag(self, tmp_path, collection):
        run_path, qrels_path = collection
        external = tmp_path / "external.csv"
        external.write_text("topic_id,method,docs_examined\nsynth-0000,sampler,30\n")
        assert main(["eval", "--results", str(external), "--run", str(run_path),
                     "--qrels", str(qrels_path), "--out", str(tmp_path / "r")]) == 2

    def test_schema_mismatch_exits_2(self, tmp_path, collection):
        run_path, qrels_path = collection
        broken = tmp_path / "broken.csv"
        broken.write_text("topic_id,method\nt1,m\n")
        assert main(["eval", "--results", str(broken), "--run", str(run_path),
                     "--qrels", str(qrels_path), "--out", str(tmp_path / "r")]) == 2

    def test_empty_results_exit_2(self, tmp_path, collection):
        run_path, qrels_path = collection
        empty = tmp_path / "empty.csv"
        empty.write_text("topic_id,method,docs_examined\n")
        assert main(["eval", "--results", str(empty), "--run", str(run_path),
                     "--qrels", str(qrels_path), "--out", str(tmp_path / "r")]) == 2
