import json
from unittest.mock import patch

import numpy as np
import pandas as pd
import pytest

from redda_cli import main
from src.errors import EstimationError
from src.utils.simlab import generate_clean

FAST = ["--n-start", "2", "--max-iter", "20", "--seed", "5"]


def write_table(path, X, labels=None, names=None):
    names = names or [f"x{j + 1}" for j in range(X.shape[1])]
    frame = pd.DataFrame(X, columns=names)
    if labels is not None:
        frame["class"] = labels
    frame.to_csv(path, index=False)
    return str(path)


@pytest.fixture
def tables(tmp_path):
    """Two separated classes on x1, a redundant x2 and a noise x3."""
    rng = np.random.default_rng(0)

    def draw(n):
        labels = np.repeat(["a", "b"], n // 2)
        x1 = rng.normal(size=n) + 4.0 * (labels == "b")
        x2 = 0.5 * x1 + rng.normal(size=n)
        return np.column_stack([x1, x2, rng.normal(size=n)]), labels

    X, labels = draw(100)
    X_test, labels_test = draw(40)
    return {
        "train": write_table(tmp_path / "train.csv", X, labels),
        "test": write_table(tmp_path / "test.csv", X_test, labels_test),
        "dir": tmp_path,
    }


def run(argv, capsys):
    code = main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_fit_then_predict_from_report(tables, capsys):
    """A fit report restores the classifier used by predict."""
    fit_path = str(tables["dir"] / "fit.json")
    code, _, _ = run(["fit", "--train", tables["train"], "--gamma", "0.05", "--out", fit_path] + FAST, capsys)
    assert code == 0
    with open(fit_path) as f:
        report = json.load(f)
    assert report["command"] == "fit"
    assert report["model"]["kind"] == "REDDA"
    assert report["model"]["n_trimmed"] == 5
    assert len(report["trimmed"]) == 5
    assert report["data"]["class_mapping"] == [{"class": 1, "label": "a"}, {"class": 2, "label": "b"}]

    code, out, _ = run(["predict", "--fit", fit_path, "--test", tables["test"]], capsys)
    assert code == 0
    predicted = json.loads(out)
    assert len(predicted["predictions"]) == 40
    assert predicted["metrics"]["misclassification_error"] < 0.2
    for row in predicted["predictions"]:
        assert sum(row["posterior"]) == pytest.approx(1.0)


def test_reruns_are_byte_identical(tables, capsys):
    """The same command with the same seed writes the same bytes."""
    outputs = []
    for name in ("one.json", "two.json"):
        path = tables["dir"] / name
        assert run(["fit", "--train", tables["train"], "--out", str(path)] + FAST, capsys)[0] == 0
        outputs.append(path.read_bytes())
    assert outputs[0] == outputs[1]


def test_config_file_precedence(tables, capsys):
    """Flags override the config file, which overrides the defaults."""
    config = tables["dir"] / "settings.json"
    config.write_text(json.dumps({"gamma": 0.1, "seed": 7, "n-start": 2, "max_iter": 10}))
    code, out, _ = run(["fit", "--train", tables["train"], "--config", str(config), "--seed", "9"], capsys)
    assert code == 0
    echo = json.loads(out)["config"]
    assert echo["gamma"] == 0.1
    assert echo["seed"] == 9
    assert echo["n_start"] == 2
    assert echo["model"] == "VVV"


def test_unknown_config_key_is_a_validation_error(tables, capsys):
    """Config files may only name flags of the command."""
    config = tables["dir"] / "settings.json"
    config.write_text(json.dumps({"grid": "0.1,0"}))
    code, _, err = run(["fit", "--train", tables["train"], "--config", str(config)], capsys)
    assert code == 1
    assert "error: validation:" in err


@pytest.mark.parametrize(
    "argv",
    [
        ["fit"],
        ["fit", "--gamma", "0.5"],
        ["fit", "--model", "ABC"],
        ["no-such-command"],
        ["select-mlsubset"],
    ],
)
def test_validation_failures_exit_with_one(tables, capsys, argv):
    """Usage and range errors print one error line and exit 1."""
    if len(argv) > 1 or argv[0] == "select-mlsubset":
        argv = argv + ["--train", tables["train"]]
    code, out, err = run(argv, capsys)
    assert code == 1
    assert out == ""
    assert err.strip().splitlines()[-1].startswith("error: validation:")


def test_missing_input_exits_with_three(tables, capsys):
    """Unreadable files are I/O errors."""
    code, _, err = run(["fit", "--train", str(tables["dir"] / "absent.csv")], capsys)
    assert code == 3
    assert "error: io:" in err


def test_estimation_failure_exits_with_two(tables, capsys):
    """Estimation errors exit 2."""
    with patch("src.commands.fitting.fit_redda", side_effect=EstimationError("all starts failed")):
        code, _, err = run(["fit", "--train", tables["train"]], capsys)
    assert code == 2
    assert "error: estimation: all starts failed" in err


def test_timing_is_opt_in(tables, capsys):
    """Wall-clock timing only appears with --timing."""
    _, out, _ = run(["fit", "--train", tables["train"]] + FAST, capsys)
    assert "timing" not in json.loads(out)
    _, out, _ = run(["fit", "--train", tables["train"], "--timing"] + FAST, capsys)
    assert json.loads(out)["timing"]["seconds"] >= 0.0


def test_select_tbic_report(tables, capsys):
    """The TBIC search keeps x1 and logs every stage."""
    code, out, _ = run(
        ["select-tbic", "--train", tables["train"], "--gamma", "0.05", "--tbic-n-start", "2", "--seed", "3"], capsys
    )
    assert code == 0
    report = json.loads(out)
    assert [v["name"] for v in report["selected"]] == ["x1"]
    assert report["steps"][0]["decision"] == "accepted"
    assert report["steps"][0]["variable"] == {"index": 1, "name": "x1"}


def test_selection_report_restricts_fit(tables, capsys):
    """--selection limits fit to the variables of a selection report."""
    selection = tables["dir"] / "selection.json"
    selection.write_text(json.dumps({"command": "select-tbic", "selected": [{"index": 3, "name": "x3"}]}))
    code, out, _ = run(["fit", "--train", tables["train"], "--selection", str(selection)] + FAST, capsys)
    assert code == 0
    assert json.loads(out)["variables"] == [{"index": 3, "name": "x3"}]


def test_ml_subset_report_drives_prediction_and_outliers(tmp_path, capsys):
    """An ML subset report predicts on its relevant variables; --p scores outliers in-process."""
    train = generate_clean(500, seed=2021)
    test = generate_clean(30, seed=2)
    test_X = test.X.copy()
    test_X[4, :3] = [40.0, -40.0, 40.0]
    names = train.feature_names
    train_path = write_table(tmp_path / "train.csv", train.X, train.labels + 1, names)
    test_path = write_table(tmp_path / "test.csv", test_X, None, names)
    fit_path = str(tmp_path / "subset.json")

    code, _, _ = run(
        ["select-mlsubset", "--train", train_path, "--p", "3", "--n-init", "3", "--max-iter", "30",
         "--seed", "9", "--out", fit_path],
        capsys,
    )
    assert code == 0
    with open(fit_path) as f:
        report = json.load(f)
    assert [v["index"] for v in report["selected"]] == [1, 2, 3]
    assert np.asarray(report["link"]["coefficients"]).shape == (13, 3)

    code, out, _ = run(["predict", "--fit", fit_path, "--test", test_path], capsys)
    assert code == 0
    assert "metrics" not in json.loads(out)

    code, out, _ = run(
        ["detect-outliers", "--train", train_path, "--test", test_path, "--p", "3", "--n-init", "3",
         "--max-iter", "30", "--seed", "9", "--top-k", "1"],
        capsys,
    )
    assert code == 0
    scored = json.loads(out)
    assert scored["flagged"] == [{"index": 5, "row": "5"}]
    assert scored["ranking"][0] == 5


def test_monitor_gamma_report(tables, capsys):
    """The trimming path lists one selection per grid level."""
    code, out, _ = run(
        ["monitor-gamma", "--train", tables["train"], "--method", "mlsubset", "--p", "1", "--grid", "0.1,0",
         "--n-init", "2", "--max-iter", "10"],
        capsys,
    )
    assert code == 0
    report = json.loads(out)
    assert [entry["gamma"] for entry in report["path"]] == [0.1, 0.0]
    assert len(report["distances"]) == 1


def test_simulate_is_deterministic(tmp_path, capsys):
    """A tiny experiment reruns to the same bytes."""
    experiment = tmp_path / "tiny.json"
    experiment.write_text(json.dumps({
        "replications": 1, "n_train": 150, "n_test": 50, "gammas": [0.05], "methods": ["none"],
        "scenarios": [{"n_outliers": 1, "n_label_noise": 2}], "classifier_n_start": 2, "max_iter": 10,
    }))
    outputs = []
    for name in ("a.json", "b.json"):
        path = tmp_path / name
        code, _, _ = run(["simulate", "--experiment", str(experiment), "--seed", "11", "--out", str(path)], capsys)
        assert code == 0
        outputs.append(path.read_bytes())
    assert outputs[0] == outputs[1]
    report = json.loads(outputs[0])
    assert report["experiment"]["seed"] == 11
    assert len(report["records"]) == 1
    assert report["aggregates"][0]["method"] == "none"
