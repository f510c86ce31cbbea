import numpy as np
import pytest

from src.dataset import LabeledDataset, load_dataset
from src.errors import DataIOError, ValidationError


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_load_dataset_codes_labels_by_first_appearance(tmp_path):
    """Class codes follow the order in which labels first appear."""
    path = write(tmp_path, "train.csv", "x1,x2,class\n1.0,2.0,b\n3.0,4.0,a\n5.0,6.0,b\n")
    data = load_dataset(path)
    assert data.class_names == ["b", "a"]
    np.testing.assert_array_equal(data.labels, [0, 1, 0])
    assert data.feature_names == ["x1", "x2"]
    np.testing.assert_array_equal(data.X, [[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    assert data.row_ids == ["1", "2", "3"]


def test_load_dataset_sniffs_tabs_and_reads_ids(tmp_path):
    """Tab-separated files with a row-identifier column are accepted."""
    path = write(tmp_path, "train.tsv", "id\tx1\tgroup\nr1\t1.5\tu\nr2\t-2\tv\n")
    data = load_dataset(path, label_column="group", id_column="id")
    assert data.row_ids == ["r1", "r2"]
    assert data.feature_names == ["x1"]
    assert data.n_classes == 2


def test_load_dataset_rejects_missing_and_non_numeric_cells(tmp_path):
    """Missing or non-numeric feature cells are validation errors naming the row."""
    path = write(tmp_path, "na.csv", "x1,class\n1.0,a\nNA,b\n")
    with pytest.raises(ValidationError, match="row 2"):
        load_dataset(path)
    path = write(tmp_path, "text.csv", "x1,class\n1.0,a\nhigh,b\n")
    with pytest.raises(ValidationError, match="Non-numeric"):
        load_dataset(path)
    path = write(tmp_path, "inf.csv", "x1,class\n1.0,a\ninf,b\n")
    with pytest.raises(ValidationError):
        load_dataset(path)


def test_load_dataset_label_requirements(tmp_path):
    """Training files need the label column and two levels; test files may omit labels."""
    path = write(tmp_path, "nolabel.csv", "x1,x2\n1,2\n3,4\n")
    with pytest.raises(ValidationError):
        load_dataset(path)
    test = load_dataset(path, require_labels=False)
    assert test.labels is None

    path = write(tmp_path, "single.csv", "x1,class\n1,a\n2,a\n")
    with pytest.raises(ValidationError):
        load_dataset(path)


def test_load_dataset_keeps_training_levels(tmp_path):
    """Known levels keep their codes; unseen test levels are appended."""
    path = write(tmp_path, "test.csv", "x1,class\n1,a\n2,c\n")
    data = load_dataset(path, require_labels=False, label_levels=["b", "a"])
    assert data.class_names == ["b", "a", "c"]
    np.testing.assert_array_equal(data.labels, [1, 2])


def test_load_dataset_missing_file():
    """An absent file is an I/O error."""
    with pytest.raises(DataIOError):
        load_dataset("/nonexistent/train.csv")


def test_subset_and_resolve_columns():
    """Columns resolve by name or 1-based index and subsets keep labels."""
    data = LabeledDataset(X=np.arange(12.0).reshape(4, 3), labels=[0, 1, 0, 1], feature_names=["a", "b", "c"])
    assert data.resolve_columns(["c", "1"]) == [2, 0]
    with pytest.raises(ValidationError):
        data.resolve_columns(["7"])
    sub = data.subset_columns([2, 0])
    assert sub.feature_names == ["c", "a"]
    np.testing.assert_array_equal(sub.X[:, 0], data.X[:, 2])
    np.testing.assert_array_equal(sub.class_counts(), [2, 2])


def test_dataset_shape_checks():
    """Label and name lengths must match the matrix."""
    with pytest.raises(ValidationError):
        LabeledDataset(X=np.zeros((3, 2)), labels=[0, 1])
    with pytest.raises(ValidationError):
        LabeledDataset(X=np.zeros((3, 2)), labels=None, feature_names=["a"])
    with pytest.raises(ValidationError):
        LabeledDataset(X=np.zeros((2, 2)), labels=None).require_labels()
