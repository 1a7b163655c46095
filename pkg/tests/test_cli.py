import pytest

from vowel_depression.cli import main

TINY = ["--set", "corpus.n_depressed=3", "--set", "corpus.n_control=3"]


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_seed_is_required(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["gen-data", "--workdir", str(tmp_path)])
    assert exc.value.code == 2
    assert "seed" in capsys.readouterr().err


def test_usage_errors_exit_2(tmp_path, capsys):
    for argv in (
        ["explode"],
        ["segment", "--seed", "1", "--set", "vowel.nonsense=1"],
        ["segment", "--seed", "1", "--set", "novalue"],
        ["train-dep", "--seed", "1", "--kind", "conv9"],
    ):
        with pytest.raises(SystemExit) as exc:
            main(argv)
        assert exc.value.code == 2, argv
    capsys.readouterr()


def test_missing_artifact_exits_1(tmp_path, capsys):
    code, _, err = run(capsys, "segment", "--workdir", str(tmp_path), "--seed", "1")
    assert code == 1
    assert "run `gen-data` first" in err


def test_show_config_prints_defaults(capsys):
    code, out, _ = run(capsys, "show-config", "--set", "depression.n_epochs=5")
    assert code == 0
    assert "[depression]" in out and "n_epochs = 5" in out and "thresholds = 0,0.3,0.6,0.9" in out


def test_gen_data_and_segment(tmp_path, capsys):
    w = ["--workdir", str(tmp_path), "--seed", "2"]
    code, out, _ = run(capsys, "gen-data", *w, *TINY)
    assert code == 0 and "6 participants" in out
    code, out, _ = run(capsys, "segment", *w)
    assert code == 0 and out.strip().endswith("segments")
    assert (tmp_path / "cache" / "patches.f32.idx.csv").exists()
    assert not list((tmp_path / "cache").glob(".*"))  # no temp files left behind
    code, _, err = run(capsys, "train-dep", *w)
    assert code == 1 and "embed --kind conv5" in err
