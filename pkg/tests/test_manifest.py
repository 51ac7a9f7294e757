import pytest

from cacon.errors import ManifestError
from cacon.manifest import SubjectRecord, read_manifest, write_manifest


@pytest.fixture
def dataset_dir(tmp_path):
    (tmp_path / "imgs").mkdir()
    for i in range(3):
        (tmp_path / "imgs" / f"{i}.ctns").write_bytes(b"x")
    return tmp_path


def _write(tmp_path, text):
    p = tmp_path / "manifest.csv"
    p.write_text(text)
    return p


class TestReadWrite:
    def test_round_trip(self, dataset_dir):
        records = [
            SubjectRecord(0, 3, "train", "imgs/0.ctns"),
            SubjectRecord(1, 17, "finetune", "imgs/1.ctns"),
            SubjectRecord(1, 34, "test", "imgs/2.ctns"),
        ]
        p = dataset_dir / "manifest.csv"
        write_manifest(p, records)
        assert read_manifest(p) == records

    def test_header_written_exactly(self, dataset_dir):
        p = dataset_dir / "manifest.csv"
        write_manifest(p, [])
        assert p.read_text().splitlines()[0] == "subject_id,age,split,path"


class TestRejection:
    def test_bad_header_is_line_1(self, dataset_dir):
        p = _write(dataset_dir, "id,age,split,path\n")
        with pytest.raises(ManifestError, match="line 1"):
            read_manifest(p)

    def test_non_integer_age_names_line_2(self, dataset_dir):
        p = _write(dataset_dir,
                   "subject_id,age,split,path\n0,abc,train,imgs/0.ctns\n")
        with pytest.raises(ManifestError, match="line 2.*age.*'abc'"):
            read_manifest(p)

    def test_error_names_first_bad_line(self, dataset_dir):
        p = _write(dataset_dir,
                   "subject_id,age,split,path\n"
                   "0,1,train,imgs/0.ctns\n"
                   "0,2,train,imgs/1.ctns\n"
                   "0,-4,train,imgs/2.ctns\n")
        with pytest.raises(ManifestError, match="line 4.*age"):
            read_manifest(p)

    def test_bad_split(self, dataset_dir):
        p = _write(dataset_dir,
                   "subject_id,age,split,path\n0,1,val,imgs/0.ctns\n")
        with pytest.raises(ManifestError, match="line 2.*split"):
            read_manifest(p)

    def test_negative_subject_id(self, dataset_dir):
        p = _write(dataset_dir,
                   "subject_id,age,split,path\n-1,1,train,imgs/0.ctns\n")
        with pytest.raises(ManifestError, match="line 2.*subject_id"):
            read_manifest(p)

    def test_wrong_column_count(self, dataset_dir):
        p = _write(dataset_dir, "subject_id,age,split,path\n0,1,train\n")
        with pytest.raises(ManifestError, match="line 2.*columns"):
            read_manifest(p)

    def test_dangling_path(self, dataset_dir):
        p = _write(dataset_dir,
                   "subject_id,age,split,path\n0,1,train,imgs/missing.ctns\n")
        with pytest.raises(ManifestError, match="line 2.*does not resolve"):
            read_manifest(p)

    def test_dangling_path_ignorable(self, dataset_dir):
        p = _write(dataset_dir,
                   "subject_id,age,split,path\n0,1,train,imgs/missing.ctns\n")
        recs = read_manifest(p, check_paths=False)
        assert recs[0].path == "imgs/missing.ctns"

    def test_empty_file(self, dataset_dir):
        p = _write(dataset_dir, "")
        with pytest.raises(ManifestError, match="line 1.*empty"):
            read_manifest(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ManifestError, match="not found"):
            read_manifest(tmp_path / "nope.csv")
