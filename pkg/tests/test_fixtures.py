import ast
import shutil
import subprocess
import sys

import pytest

from survrisk.verify import FIXTURE_NAMES, fixtures_root, verify_fixtures

ORACLE_FIXTURES = [n for n in FIXTURE_NAMES if (fixtures_root() / n / "oracle.py").exists()]


def test_all_fixtures_pass():
    results = verify_fixtures()
    assert [r.name for r in results] == list(FIXTURE_NAMES)
    for r in results:
        assert r.passed, (r.name, r.mismatches)


def test_layout():
    for name in FIXTURE_NAMES:
        d = fixtures_root() / name
        assert (d / "input").is_dir() and (d / "expected").is_dir() and (d / "oracle.md").is_file()


@pytest.mark.parametrize("name", ORACLE_FIXTURES)
def test_oracle_reproduces_expected(name, tmp_path):
    src = fixtures_root() / name
    dst = tmp_path / name
    shutil.copytree(src, dst)
    shutil.rmtree(dst / "expected")
    subprocess.run([sys.executable, str(dst / "oracle.py")], check=True, cwd=tmp_path)
    for f in (src / "expected").iterdir():
        assert (dst / "expected" / f.name).read_bytes() == f.read_bytes(), f.name


@pytest.mark.parametrize("name", ORACLE_FIXTURES)
def test_oracles_do_not_import_package(name):
    tree = ast.parse((fixtures_root() / name / "oracle.py").read_text())
    mods = {a.name.split(".")[0] for n in ast.walk(tree) if isinstance(n, ast.Import) for a in n.names}
    mods |= {n.module.split(".")[0] for n in ast.walk(tree) if isinstance(n, ast.ImportFrom) and n.module}
    assert mods <= set(sys.stdlib_module_names)


def test_mismatch_is_itemized(tmp_path):
    shutil.copytree(fixtures_root(), tmp_path / "fx")
    target = tmp_path / "fx" / "harrell_small" / "expected" / "c_index.json"
    target.write_text('{"c_index": 0.123}\n')
    res = {r.name: r for r in verify_fixtures(tmp_path / "fx")}
    assert not res["harrell_small"].passed and "0.123" in res["harrell_small"].mismatches[0]
    assert res["uno_six"].passed
