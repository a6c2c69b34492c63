import json

import pytest

from golden import GOLDEN_PAIRS, GOLDEN_SCORES
from legalmt.cli import ConfigError, load_config, main
from legalmt.subword import train_subword
from legalmt.toy import copy_corpus

TOY_INI = """\
[data]
train = train.tsv

[subword]
model = sw.model
vocab_size = 200

[model]
num_layers = 2
num_heads = 8
d_model = 64
d_ff = 256
dropout = 0.0
max_len = 64
label_smoothing = 0.0

[train]
preset = scratch
learning_rate = 2e-3
schedule = constant
max_epochs = {epochs}
max_len = 64
batch_size = 32

[decode]
beam_size = 4

[run]
output_dir = out
seed = 0
"""


def write_toy_run(root, epochs):
    root.mkdir(parents=True, exist_ok=True)
    corpus = copy_corpus()
    (root / "train.tsv").write_text("".join(f"{s}\t{t}\n" for s, t in zip(corpus.sources, corpus.targets)),
                                    encoding="utf-8")
    (root / "run.ini").write_text(TOY_INI.format(epochs=epochs), encoding="utf-8")
    return root / "run.ini"


@pytest.fixture(scope="module")
def toy_run(tmp_path_factory):
    """The full 300-epoch copy run driven through the command line."""
    ini = write_toy_run(tmp_path_factory.mktemp("toy"), 300)
    assert main(["tokenizer-train", str(ini)]) == 0
    assert main(["train", str(ini)]) == 0
    return ini


def read_resolved(ini, command, out="out"):
    return json.loads((ini.parent / out / f"{command}.resolved.json").read_text(encoding="utf-8"))


# ----------------------------------------------------------------- config


def test_unknown_key_is_config_error(tmp_path):
    ini = write_toy_run(tmp_path, 1)
    with open(ini, "a", encoding="utf-8") as fh:
        fh.write("\n[extra]\nnum_layers = 3\n")
    assert main(["train", str(ini), "--dry-run"]) == 2
    ini.write_text(TOY_INI.format(epochs=1).replace("d_ff =", "dff ="), encoding="utf-8")
    with pytest.raises(ConfigError, match="model.dff"):
        load_config(ini)


def test_overrides_and_relative_paths(tmp_path):
    ini = write_toy_run(tmp_path, 1)
    cfg = load_config(ini, ["train.max_epochs=7", "model.dropout=0.25"])
    assert cfg["train"]["max_epochs"] == 7 and cfg["model"]["dropout"] == 0.25
    assert cfg["data"]["train"] == str((tmp_path / "train.tsv").resolve())
    assert main(["train", str(ini), "--set", "train.max_epochs"]) == 2
    assert main(["train", str(ini), "--set", "model.dropout=lots"]) == 2


def test_missing_config_file(tmp_path):
    assert main(["train", str(tmp_path / "nope.ini")]) == 2


# ------------------------------------------------------------- tokenizer


def test_tokenizer_train_outputs_and_determinism(tmp_path, capsys):
    a = write_toy_run(tmp_path / "a", 1)
    b = write_toy_run(tmp_path / "b", 1)
    assert main(["tokenizer-train", str(a)]) == 0
    printed = dict(line.split("\t") for line in capsys.readouterr().out.splitlines())
    assert printed["vocab_size"] == "200"
    assert main(["tokenizer-train", str(b)]) == 0
    assert (a.parent / "sw.model").read_bytes() == (b.parent / "sw.model").read_bytes()
    assert (a.parent / "out" / "tokenizer-train.resolved.json").is_file()


def test_tokenizer_vocab_too_small_exits_2(tmp_path, capsys):
    ini = write_toy_run(tmp_path, 1)
    assert main(["tokenizer-train", str(ini), "--set", "subword.vocab_size=10"]) == 2
    assert "vocab" in capsys.readouterr().err


def test_train_without_subword_model_exits_2(tmp_path):
    assert main(["train", str(write_toy_run(tmp_path, 1))]) == 2


# ------------------------------------------------------------------ train


def test_two_runs_give_identical_checkpoints(tmp_path):
    digests = []
    for name in ("a", "b"):
        ini = write_toy_run(tmp_path / name, 2)
        assert main(["tokenizer-train", str(ini)]) == 0
        assert main(["train", str(ini)]) == 0
        ckpt = ini.parent / "out" / "checkpoints"
        digests.append([(p.name, p.read_bytes()) for p in sorted(ckpt.iterdir())])
    assert digests[0] == digests[1]
    assert [n for n, _ in digests[0]] == ["epoch0001.mtfg", "epoch0002.mtfg", "last.mtfg"]


def test_toy_run_reaches_low_loss(toy_run):
    records = [json.loads(line) for line in (toy_run.parent / "out" / "loss.jsonl").read_text().splitlines()]
    assert len(records) == 300
    assert records[-1]["train_loss"] < 0.5


def test_scratch_preset_from_snapshot(tmp_path):
    ini = tmp_path / "bare.ini"
    ini.write_text("[data]\ntrain = t.tsv\n", encoding="utf-8")
    assert main(["train", str(ini), "--dry-run"]) == 0
    snap = read_resolved(ini, "train", out="runs")
    m, t = snap["model_config"], snap["train_config"]
    assert (m["num_layers"], m["num_heads"], m["d_model"], m["dropout"], m["max_len"], m["vocab_size"]) == \
        (4, 8, 128, 0.1, 256, 32000)
    assert t["batch_size"] == 32 and t["preset"] == "scratch"


def test_continued_preset_defaults_resolve_exactly(tmp_path):
    ini = write_toy_run(tmp_path, 1)
    text = ini.read_text().split("[train]")[0] + "[train]\npreset = continued\n\n[run]\noutput_dir = out\n"
    ini.write_text(text, encoding="utf-8")
    fake = tmp_path / "c.mtfg"
    assert main(["tokenizer-train", str(ini)]) == 0
    assert main(["train", str(ini), "--set", "train.preset=scratch", "--set", "train.max_epochs=1"]) == 0
    fake.write_bytes((tmp_path / "out" / "checkpoints" / "last.mtfg").read_bytes())
    assert main(["continue", str(ini), "--checkpoint", str(fake), "--dry-run"]) == 0
    t = read_resolved(ini, "continue")["train_config"]
    assert (t["learning_rate"], t["weight_decay"], t["batch_size"], t["max_len"]) == (2e-5, 0.01, 32, 128)
    assert t["optimizer"] == "adamw"


def test_continue_missing_checkpoint_exits_2(tmp_path):
    ini = write_toy_run(tmp_path, 1)
    assert main(["continue", str(ini), "--checkpoint", str(tmp_path / "none.mtfg")]) == 2
    assert main(["continue", str(ini)]) == 2


def test_continue_runs(toy_run, tmp_path):
    ckpt = toy_run.parent / "out" / "checkpoints" / "last.mtfg"
    assert main(["continue", str(toy_run), "--checkpoint", str(ckpt),
                 "--set", "train.preset=continued", "--set", "train.learning_rate=2e-5", "--set", "train.max_epochs=1",
                 "--set", "run.output_dir=" + str(tmp_path / "cont")]) == 0
    records = (tmp_path / "cont" / "continued_loss.jsonl").read_text().splitlines()
    assert len(records) == 1 and json.loads(records[0])["train_loss"] < 0.5


# -------------------------------------------------------------- translate


def test_translate_greedy_and_beam(toy_run, tmp_path):
    ckpt = toy_run.parent / "out" / "checkpoints" / "last.mtfg"
    sources = copy_corpus().sources[:8]
    src = tmp_path / "src.txt"
    src.write_text("".join(s + "\n" for s in sources), encoding="utf-8")
    outs = {}
    for strategy in ("greedy", "beam"):
        out = tmp_path / f"{strategy}.txt"
        assert main(["translate", str(toy_run), "--checkpoint", str(ckpt), "--input", str(src),
                     "--output", str(out), "--strategy", strategy]) == 0
        outs[strategy] = out.read_text(encoding="utf-8").splitlines()
    assert len(outs["greedy"]) == len(outs["beam"]) == 8
    assert sum(h == s for h, s in zip(outs["greedy"], sources)) >= 7
    assert read_resolved(toy_run, "translate")["decode_config"]["strategy"] == "beam"


def test_translate_empty_input(toy_run, tmp_path):
    ckpt = toy_run.parent / "out" / "checkpoints" / "last.mtfg"
    (tmp_path / "empty.txt").write_text("", encoding="utf-8")
    out = tmp_path / "out.txt"
    assert main(["translate", str(toy_run), "--checkpoint", str(ckpt), "--input", str(tmp_path / "empty.txt"),
                 "--output", str(out)]) == 0
    assert out.read_bytes() == b""


def test_translate_hash_mismatch_exits_2(toy_run, tmp_path):
    ckpt = toy_run.parent / "out" / "checkpoints" / "last.mtfg"
    other = tmp_path / "other.model"
    train_subword(["completely different text here"], 40).save(other)
    (tmp_path / "in.txt").write_text("x\n", encoding="utf-8")
    assert main(["translate", str(toy_run), "--set", f"subword.model={other}", "--checkpoint", str(ckpt),
                 "--input", str(tmp_path / "in.txt"), "--output", str(tmp_path / "o.txt")]) == 2


# --------------------------------------------------------------- evaluate


def test_evaluate_identity(tmp_path, capsys):
    lines = "the court dismissed the appeal\nन्यायालय ने कहा कि आदेश शून्य था\n"
    (tmp_path / "h.txt").write_text(lines, encoding="utf-8")
    assert main(["evaluate", "--hyp", str(tmp_path / "h.txt"), "--ref", str(tmp_path / "h.txt"),
                 "--output", str(tmp_path / "rep")]) == 0
    row = capsys.readouterr().out.splitlines()[-1].split()
    assert row[1] == "100.00" and row[3] == "0.00"
    assert (tmp_path / "rep.txt").read_text(encoding="utf-8").splitlines()[-1].split() == row


def test_evaluate_golden(tmp_path):
    (tmp_path / "h.txt").write_text("".join(h + "\n" for h, _ in GOLDEN_PAIRS), encoding="utf-8")
    (tmp_path / "r.txt").write_text("".join(r + "\n" for _, r in GOLDEN_PAIRS), encoding="utf-8")
    assert main(["evaluate", "--hyp", str(tmp_path / "h.txt"), "--ref", str(tmp_path / "r.txt"),
                 "--output", str(tmp_path / "g")]) == 0
    scores = json.loads((tmp_path / "g.json").read_text(encoding="utf-8"))
    for key, want in GOLDEN_SCORES.items():
        assert scores[key] == pytest.approx(want, abs=0.01), key


def test_evaluate_misaligned_exits_1(tmp_path, capsys):
    (tmp_path / "h.txt").write_text("a\nb\nc\n", encoding="utf-8")
    (tmp_path / "r.txt").write_text("a\nb\n", encoding="utf-8")
    assert main(["evaluate", "--hyp", str(tmp_path / "h.txt"), "--ref", str(tmp_path / "r.txt"),
                 "--output", str(tmp_path / "x")]) == 1
    err = capsys.readouterr().err
    assert "3" in err and "2" in err


def test_evaluate_missing_file_exits_2(tmp_path):
    assert main(["evaluate", "--hyp", str(tmp_path / "h"), "--ref", str(tmp_path / "r"),
                 "--output", str(tmp_path / "x")]) == 2


def test_report_combines_rows(tmp_path, capsys):
    for name, hyp in (("a", "a b c d e"), ("b", "a b c x e")):
        (tmp_path / f"{name}.h").write_text(hyp + "\n", encoding="utf-8")
        (tmp_path / "ref").write_text("a b c d e\n", encoding="utf-8")
        assert main(["evaluate", "--hyp", str(tmp_path / f"{name}.h"), "--ref", str(tmp_path / "ref"),
                     "--output", str(tmp_path / name)]) == 0
    capsys.readouterr()
    assert main(["report", str(tmp_path / "a.json"), str(tmp_path / "b.json"), "--label", "scratch",
                 "--label", "tuned", "--output", str(tmp_path / "t.txt")]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].split()[:4] == ["Model", "BLEU", "chrF++", "TER"]
    assert [ln.split()[0] for ln in lines[2:]] == ["scratch", "tuned"]
    assert main(["report", str(tmp_path / "a.json"), "--label", "x", "--label", "y"]) == 2


def test_usage_error_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["no-such-command"])
    assert exc.value.code == 2
