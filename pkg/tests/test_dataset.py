"""Tests for dataset ingestion, export and synthetic generation."""

import numpy as np
import pytest

from krlsdl.dataset import Dataset, ingest_csv, load_preset, make_planted_dataset, write_csv
from krlsdl.exceptions import ParseError, ValidationError


def _write(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestIngestCsv:
    def test_basic(self, tmp_path):
        path = _write(tmp_path, "label,a,b\n1,0.5,2\n0,1,-1\n1,3,4\n")
        ds = ingest_csv(path)
        assert ds.n_features == 2
        assert ds.n_samples == 3
        np.testing.assert_array_equal(ds.samples[:, 0], [0.5, 2.0])
        np.testing.assert_array_equal(ds.labels, [1, 0, 1])
        assert ds.feature_names == ["a", "b"]
        assert ds.source == str(path)

    def test_label_column_anywhere(self, tmp_path):
        ds = ingest_csv(_write(tmp_path, "a,label,b\n1,x,2\n3,y,4\n"))
        np.testing.assert_array_equal(ds.samples, [[1.0, 3.0], [2.0, 4.0]])
        assert ds.label_names == ["x", "y"]

    def test_numeric_labels_sorted_numerically(self, tmp_path):
        ds = ingest_csv(_write(tmp_path, "label,a\n10,1\n2,1\n9,1\n"))
        assert ds.label_names == ["2", "9", "10"]
        np.testing.assert_array_equal(ds.labels, [2, 0, 1])
        assert ds.label_mapping() == {"0": "2", "1": "9", "2": "10"}

    def test_blank_lines_ignored(self, tmp_path):
        ds = ingest_csv(_write(tmp_path, "label,a\n0,1\n\n1,2\n"))
        assert ds.n_samples == 2

    def test_nan_cites_row(self, tmp_path):
        rows = "".join(f"0,{i}\n" for i in range(6)) + "1,nan\n"
        with pytest.raises(ParseError, match="row 7") as exc:
            ingest_csv(_write(tmp_path, "label,a\n" + rows))
        assert exc.value.details["column"] == "a"

    def test_non_numeric(self, tmp_path):
        with pytest.raises(ParseError, match="row 2: column 'b' is not numeric"):
            ingest_csv(_write(tmp_path, "label,a,b\n0,1,2\n0,1,abc\n"))

    def test_ragged_row(self, tmp_path):
        with pytest.raises(ParseError, match="row 1: expected 3 fields, found 2"):
            ingest_csv(_write(tmp_path, "label,a,b\n0,1\n"))

    def test_missing_label_column(self, tmp_path):
        with pytest.raises(ParseError, match="no 'label' column"):
            ingest_csv(_write(tmp_path, "a,b\n1,2\n"))

    def test_empty_label(self, tmp_path):
        with pytest.raises(ParseError, match="empty label"):
            ingest_csv(_write(tmp_path, "label,a\n ,1\n"))

    def test_no_rows(self, tmp_path):
        with pytest.raises(ParseError, match="no data rows"):
            ingest_csv(_write(tmp_path, "label,a\n"))

    def test_empty_file(self, tmp_path):
        with pytest.raises(ParseError, match="empty"):
            ingest_csv(_write(tmp_path, ""))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ParseError, match="Cannot read"):
            ingest_csv(tmp_path / "nope.csv")


class TestWriteCsv:
    def test_reads_back_unchanged(self, tmp_path, rng):
        ds = Dataset(
            samples=rng.standard_normal((3, 5)),
            labels=np.array([0, 1, 1, 0, 1]),
            label_names=["cat", "dog"],
            feature_names=["f0", "f1", "f2"],
        )
        back = ingest_csv(write_csv(ds, tmp_path / "out.csv"))
        np.testing.assert_array_equal(back.samples, ds.samples)
        np.testing.assert_array_equal(back.labels, ds.labels)
        assert back.label_names == ds.label_names
        assert back.feature_names == ds.feature_names

    def test_default_feature_names(self, tmp_path):
        ds = Dataset(samples=np.ones((2, 1)), labels=np.array([0]), label_names=["a"])
        write_csv(ds, tmp_path / "out.csv")
        assert (tmp_path / "out.csv").read_text().splitlines()[0] == "label,x0,x1"


class TestDatasetValidation:
    def test_label_count(self):
        with pytest.raises(ValidationError, match="2 labels for 3 samples"):
            Dataset(samples=np.ones((2, 3)), labels=np.array([0, 0]), label_names=["a"])

    def test_non_finite(self):
        with pytest.raises(ValidationError, match="non-finite"):
            Dataset(samples=np.array([[np.inf]]), labels=np.array([0]), label_names=["a"])

    def test_label_out_of_range(self):
        with pytest.raises(ValidationError, match="label_names"):
            Dataset(samples=np.ones((1, 1)), labels=np.array([1]), label_names=["a"])

    def test_class_counts(self):
        ds = Dataset(samples=np.ones((1, 3)), labels=np.array([1, 0, 1]), label_names=["a", "b"])
        assert ds.class_counts() == {0: 1, 1: 2}


class TestSynthetic:
    def test_planted_shape_and_interleaving(self):
        ds = make_planted_dataset(6, 3, 4, 10, 2, 0.0, seed=1)
        assert ds.samples.shape == (6, 30)
        np.testing.assert_array_equal(ds.labels[:6], [0, 1, 2, 0, 1, 2])
        assert ds.class_counts() == {0: 10, 1: 10, 2: 10}

    def test_noiseless_samples_in_class_span(self):
        ds = make_planted_dataset(8, 2, 3, 20, 2, 0.0, seed=2)
        block = ds.samples[:, ds.labels == 0]
        assert np.linalg.matrix_rank(block, tol=1e-9) == 3

    def test_seeded(self):
        a = make_planted_dataset(5, 2, 3, 8, 2, 0.1, seed=3)
        b = make_planted_dataset(5, 2, 3, 8, 2, 0.1, seed=3)
        np.testing.assert_array_equal(a.samples, b.samples)

    def test_active_atoms_bound(self):
        with pytest.raises(ValidationError, match="active_atoms"):
            make_planted_dataset(5, 2, 3, 8, 4, 0.1, seed=3)

    def test_load_preset(self):
        ds = load_preset("planted-small")
        assert ds.n_features == 8
        assert ds.class_counts() == {0: 60, 1: 60}
        assert ds.source == "preset:planted-small"
