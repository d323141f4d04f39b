import math

import pytest

import genref


def test_dataset_is_deterministic_and_sound():
    a = genref.generate_dataset(7, 20)
    assert a == genref.generate_dataset(7, 20)
    assert genref.dataset_jsonl(7, 20) == genref.dataset_jsonl(7, 20)
    for s in a:
        assert genref.derive_answer(s) == s["answer"]


def test_metric_values():
    toks = "the cat sat down".split()
    assert genref.rouge_l(toks, toks) == 1.0
    assert genref.lcs_length(["a", "b", "c"], ["a", "c"]) == 2
    assert genref.meteor_lite(toks, toks) == 0.9921875
    scores, mean = genref.cider([toks, "a dog ran off".split()], [toks, "a dog ran off".split()])
    assert mean == pytest.approx(1.0, abs=1e-12)
    report = genref.evaluate(["the cat sat on the mat"] * 2, ["the cat sat on the mat"] * 2)
    assert report["mean"]["rouge_l"] == 1.0


def test_accuracy_and_ratings():
    rep = genref.accuracy_report([(True, True), (True, False), (False, True)])
    assert rep["overall"] <= min(rep["answer"], rep["rationale"])
    mean, std = genref.summarize_ratings([4, 5, 3])
    assert mean == 4.0 and std == 1.0


def test_grad_check_tiny():
    r = genref.grad_check(1, "qic")
    assert r["max_relative_error"] < 1e-4


def test_train_generate_checkpoint_round_trip(tmp_path):
    overrides = {
        "data": {"n_train": 24, "n_val": 4},
        "pipeline": {"sizes": {"hidden": 16, "attention": 8, "embedding": 8}},
        "train": {"epochs": 1},
    }
    model, report = genref.train_toy(overrides)
    assert len(report["epochs"]) == 1
    assert math.isfinite(report["epochs"][0]["train_loss"])
    samples = genref.generate_dataset(5, 3)
    out = model.generate(samples)
    assert len(out) == 3 and len(out[0]["answers"]) == 2
    loss = model.loss(samples)
    assert loss["names"] == ["AG", "RG", "AR", "RR"]
    path = tmp_path / "m.grck"
    model.save(str(path))
    loaded = genref.load_checkpoint(str(path))
    assert loaded.generate(samples) == out
    assert loaded.param_count == model.param_count
    path.write_bytes(b"junk")
    with pytest.raises(genref.CheckpointError):
        genref.load_checkpoint(str(path))
