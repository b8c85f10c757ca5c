import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dialmat import cli
from dialmat import config as C
from dialmat.checkpoint import (Checkpoint, ConfigMismatch, CorruptCheckpoint, config_hash,
                                load_checkpoint, restore_maper, save_checkpoint)
from dialmat.dialworld import dataset as D
from dialmat.dialworld.generate import generate_world, sample_episode
from dialmat.dialworld.language import QuestionType
from dialmat.dialworld.world import WorldConfig
from dialmat.evaluate import (EpisodeResult, EvalReport, expert_replay_policy, make_ask_fn, rollout,
                              step_cap)
from dialmat.maper import Maper, MaperConfig, collate, make_deltas
from dialmat.mat import MatHyperParams, init_perturbation, mat_step
from dialmat.train import step_inputs

# metrics ---------------------------------------------------------------------------


def test_pwsr_two_episode_hand_case():
    rep = EvalReport("x", [EpisodeResult(True, 5, 10), EpisodeResult(False, 7, 3)])
    assert abs(rep.sr - 0.5) <= 1e-12
    assert abs(rep.pwsr - 0.25) <= 1e-12


def test_expert_replay_scores_one():
    eps = [sample_episode(generate_world(s), s, 3, "train") for s in range(12)]
    rep = rollout(expert_replay_policy(eps), eps, WorldConfig(), make_ask_fn("oracle-always"))
    assert abs(rep.sr - 1.0) <= 1e-12 and abs(rep.pwsr - 1.0) <= 1e-12
    assert all(e.agent_len == e.expert_len for e in rep.episodes)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.integers(1, 60), st.integers(0, 200)), max_size=30))
def test_pwsr_never_exceeds_sr(rows):
    rep = EvalReport("x", [EpisodeResult(s, e, a) for s, e, a in rows])
    assert 0.0 <= rep.pwsr <= rep.sr <= 1.0
    if all(a <= e for s, e, a in rows if s):
        assert rep.pwsr == pytest.approx(rep.sr, abs=1e-12)


def test_empty_report_is_zero():
    rep = EvalReport("x", [])
    assert rep.sr == 0.0 and rep.pwsr == 0.0 and rep.count == 0


def test_step_cap_rule():
    assert step_cap(5) == 30 and step_cap(0) == 20


def test_ask_policies():
    w = generate_world(0)
    ep = sample_episode(w, 0, 1, "train")
    goal = ep.subgoals[0].goal
    assert make_ask_fn("never")(w, goal, [], (0, 0)) == QuestionType.NoQuestion
    with pytest.raises(ValueError):
        make_ask_fn("questioner")
    with pytest.raises(ValueError):
        make_ask_fn("sometimes")


def test_report_dict_fields():
    d = EvalReport("pseudo_test", [EpisodeResult(True, 4, 4, ["Direction"], 1)]).to_dict()
    assert d["M"] == 1 and d["SR"] == 1.0 and d["PWSR"] == 1.0 and d["step_cap"]
    assert d["episodes"][0]["questions"] == ["Direction"]


# checkpoints -----------------------------------------------------------------------

def _trained_states():
    hp = MatHyperParams(eps_ball=0.3)
    rng = np.random.default_rng(0)
    states = {}
    for name, shape in MaperConfig().perturbation_shapes().items():
        s = init_perturbation(shape, hp)
        for _ in range(3):
            s = mat_step(s, rng.normal(size=shape))
        states[name] = s
    return states


def _toy_batch():
    ep = sample_episode(generate_world(1), 1, 2, "train")
    return collate(step_inputs(D.expert_steps(ep, WorldConfig())[:4]))


def test_checkpoint_round_trip_is_bitwise(tmp_path):
    cfg = C.default_config()
    model = Maper(C.maper_config(cfg), seed=4)
    states = _trained_states()
    path = save_checkpoint(tmp_path / "m.npz",
                           Checkpoint(cfg, 4, 7, maper=dict(model.state_dict()), perturbations=states))
    ck = load_checkpoint(path, expected_config_hash=config_hash(cfg))
    assert ck.epoch == 7 and ck.seed == 4
    again = restore_maper(ck)
    batch = _toy_batch()
    for a, b in zip(model(batch, make_deltas(states, False)),
                    again(batch, make_deltas(ck.perturbations, False))):
        np.testing.assert_array_equal(a.data, b.data)
    for name, s in states.items():
        r = ck.perturbations[name]
        for k in ("delta", "m", "v"):
            np.testing.assert_array_equal(getattr(s, k), getattr(r, k))
        assert r.t == s.t and r.hp == s.hp


def test_truncated_checkpoint_rejected(tmp_path):
    cfg = C.default_config()
    path = save_checkpoint(tmp_path / "m.npz", Checkpoint(cfg, 0, 1, perturbations=_trained_states()))
    data = path.read_bytes()
    path.write_bytes(data[: len(data) // 2])
    with pytest.raises(CorruptCheckpoint):
        load_checkpoint(path)


def test_edited_checkpoint_rejected(tmp_path):
    cfg = C.default_config()
    path = save_checkpoint(tmp_path / "m.npz", Checkpoint(cfg, 0, 1, perturbations=_trained_states()))
    with np.load(path) as z:
        arrays = {k: z[k] for k in z.files}
    arrays["mat/txt/delta"] = arrays["mat/txt/delta"] + 1e-9
    np.savez(path, **arrays)
    with pytest.raises(CorruptCheckpoint, match="digest"):
        load_checkpoint(path)


def test_checkpoint_config_mismatch_and_missing(tmp_path):
    path = save_checkpoint(tmp_path / "m.npz", Checkpoint(C.default_config(), 0, 1))
    with pytest.raises(ConfigMismatch):
        load_checkpoint(path, expected_config_hash="0" * 64)
    with pytest.raises(CorruptCheckpoint):
        load_checkpoint(tmp_path / "absent.npz")
    np.savez(tmp_path / "plain.npz", a=np.zeros(2))
    with pytest.raises(CorruptCheckpoint, match="manifest"):
        load_checkpoint(tmp_path / "plain.npz")


# config ----------------------------------------------------------------------------

def test_overrides_are_typed_and_nested():
    cfg = C.load_config(None, ["mat.eta=0.01", "mat.modalities=[act]", "train.epochs=3",
                               "env.world.view.depth=3"])
    assert cfg["mat"]["eta"] == 0.01 and cfg["mat"]["modalities"] == ["act"]
    tc = C.train_config(cfg, "d")
    assert tc.epochs == 3 and tc.mat_modalities == ("act",) and tc.mat.eta == 0.01
    assert C.maper_config(cfg).view_h == 4


def test_yaml_file_and_dump_round_trip(tmp_path):
    cfg = C.load_config(None, ["seed=5"])
    p = tmp_path / "c.yaml"
    p.write_text(C.dump_config(cfg))
    assert C.load_config(p) == cfg


@pytest.mark.parametrize("override", ["mat.nope=1", "train.lr", "=3", "nosection.x=1"])
def test_bad_override_keys(override):
    with pytest.raises(C.ConfigError):
        C.load_config(None, [override])


@pytest.mark.parametrize("override", ["mat.eta=-1", "mat.modalities=[sound]", "train.batch_size=0",
                                      "model.d_model=31"])
def test_bad_override_values(override):
    with pytest.raises(C.ConfigError):
        C.load_config(None, [override])


def test_bad_yaml_file(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("- a\n- b\n")
    with pytest.raises(C.ConfigError):
        C.load_config(p)


# CLI -------------------------------------------------------------------------------

def test_gen_data_is_byte_reproducible(tmp_path, tiny_yaml, capsys):
    for name in ("a", "b"):
        assert cli.main(["gen-data", "--config", str(tiny_yaml), "--out", str(tmp_path / name)]) == 0
    for f in ("train", "valid_seen", "pseudo_valid", "pseudo_test", "questioner_labels", "meta"):
        suffix = ".json" if f == "meta" else ".jsonl"
        assert (tmp_path / "a" / f"{f}{suffix}").read_bytes() == \
            (tmp_path / "b" / f"{f}{suffix}").read_bytes()
    out = json.loads(capsys.readouterr().out.splitlines()[0])
    assert out["counts"]["train"] == 20


def test_train_eval_chain(tmp_path, tiny_data, tiny_yaml, capsys):
    ck, metrics = tmp_path / "m.npz", tmp_path / "m.jsonl"
    argv = ["train-maper", "--config", str(tiny_yaml), "--data", str(tiny_data), "--out", str(ck),
            "--metrics", str(metrics)]
    assert cli.main(argv) == 0
    rows = [json.loads(line) for line in metrics.read_text().splitlines()]
    assert {"epoch", "split", "loss"} <= set(rows[0])
    assert rows[-1]["split"] == "valid_seen" and "SR" in rows[-1] and "PWSR" in rows[-1]
    capsys.readouterr()
    evargs = ["eval", "--data", str(tiny_data), "--maper", str(ck), "--split", "pseudo_test"]
    assert cli.main(evargs) == 0
    first = capsys.readouterr().out
    assert cli.main(evargs) == 0
    assert capsys.readouterr().out == first
    report = json.loads(first)
    assert report["M"] == 4 and 0 <= report["PWSR"] <= report["SR"] <= 1


def test_training_is_deterministic_per_seed(tmp_path, tiny_data, tiny_yaml):
    for name in ("a", "b"):
        assert cli.main(["train-maper", "--config", str(tiny_yaml), "--data", str(tiny_data),
                         "--out", str(tmp_path / f"{name}.npz"), "--seed", "3",
                         "--metrics", str(tmp_path / f"{name}.jsonl")]) == 0
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    a, b = load_checkpoint(tmp_path / "a.npz"), load_checkpoint(tmp_path / "b.npz")
    for k in a.maper:
        np.testing.assert_array_equal(a.maper[k], b.maper[k])


def test_evaluation_does_not_mutate_checkpoint(tmp_path, tiny_data, tiny_yaml):
    ck = tmp_path / "m.npz"
    assert cli.main(["train-maper", "--config", str(tiny_yaml), "--data", str(tiny_data),
                     "--out", str(ck), "--no-eval"]) == 0
    before = ck.read_bytes()
    model = restore_maper(load_checkpoint(ck))
    params = {k: v.copy() for k, v in model.state_dict().items()}
    from dialmat.evaluate import evaluate
    evaluate(model, D.load_split(tiny_data, "pseudo_test"), D.load_config(tiny_data).world)
    for k, v in model.state_dict().items():
        np.testing.assert_array_equal(v, params[k])
    assert cli.main(["eval", "--data", str(tiny_data), "--maper", str(ck)]) == 0
    assert ck.read_bytes() == before


# file formats ----------------------------------------------------------------------

def test_dataset_line_format(tiny_data):
    rec = json.loads((tiny_data / "train.jsonl").read_text().splitlines()[0])
    assert {"seed", "split", "subgoals"} <= set(rec) and rec["split"] == "train"
    sg = rec["subgoals"][0]
    assert set(sg) >= {"instruction_tokens", "goal", "expert_actions", "question_label"}
    assert all(isinstance(w, str) for w in sg["instruction_tokens"])
    label = json.loads((tiny_data / "questioner_labels.jsonl").read_text().splitlines()[0])
    assert set(label) == {"instruction_tokens", "label"} and label["label"] in QuestionType.__members__
    meta = json.loads((tiny_data / "meta.json").read_text())
    assert set(meta) == {"config", "vocab"}


def test_checkpoint_manifest_format(tmp_path):
    path = save_checkpoint(tmp_path / "m.npz", Checkpoint({"a": 1}, 2, 3, perturbations=_trained_states()))
    with np.load(path) as z:
        manifest = json.loads(z["__manifest__"].tobytes().decode())
        keys = set(z.files)
    assert set(manifest) == {"format_version", "kind", "config", "config_hash", "seed", "epoch",
                             "mat_hyperparams", "payload_sha256"}
    assert manifest["format_version"] == 1 and manifest["config_hash"] == config_hash({"a": 1})
    assert {"mat/txt/delta", "mat/txt/m", "mat/txt/v", "mat/txt/t"} <= keys


def test_questioner_commands(tmp_path, tiny_data, tiny_yaml, capsys):
    m, q, q2 = tmp_path / "m.npz", tmp_path / "q.npz", tmp_path / "q2.npz"
    base = ["--config", str(tiny_yaml), "--data", str(tiny_data)]
    assert cli.main(["train-maper", *base, "--out", str(m), "--no-eval"]) == 0
    assert cli.main(["pretrain-questioner", *base, "--out", str(q)]) == 0
    assert cli.main(["rl-questioner", *base, "--maper", str(m), "--questioner", str(q),
                     "--out", str(q2)]) == 0
    assert cli.main(["eval", "--data", str(tiny_data), "--maper", str(m), "--questioner", str(q2),
                     "--ask-policy", "questioner", "--limit", "2"]) == 0
    assert json.loads(capsys.readouterr().out.splitlines()[-1])["M"] == 2


def test_ablate_writes_table(tmp_path, tiny_data, tiny_yaml, capsys):
    out = tmp_path / "abl"
    argv = ["ablate", "--config", str(tiny_yaml), "--data", str(tiny_data), "--out", str(out),
            "--seeds", "1", "--variants", "w/o MAT", "full"]
    assert cli.main(argv) == 0
    rows = [json.loads(line) for line in (out / "ablation.jsonl").read_text().splitlines()]
    assert [r["variant"] for r in rows] == ["w/o MAT", "full"]
    table = (out / "ablation.md").read_text()
    assert "| full | 1 |" in table and "±" in table


@pytest.mark.parametrize("argv", [
    ["eval", "--data", "/nonexistent", "--maper", "/nonexistent/m.npz"],
    ["gen-data", "--out", "x", "--set", "env.n_train=oops"],
    ["gen-data", "--out", "x", "--set", "unknown.key=1"],
    ["ablate", "--data", "d", "--out", "o", "--seeds", "0"],
])
def test_cli_errors_exit_nonzero(argv, capsys):
    assert cli.main(argv) == 2
    assert "error" in capsys.readouterr().err


def test_data_dir_config_overrides_env(tiny_data):
    cfg = cli._with_data_env(C.default_config(), tiny_data)
    assert cfg["env"]["n_train"] == D.load_config(tiny_data).n_train == 20
