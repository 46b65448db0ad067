import math
import struct
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scalerc.desn import run_closed_loop, set_delay
from scalerc.dynsys import ScalarSeries, SpatioTemporalField
from scalerc.io import (
    FORMAT_VERSION,
    MAGIC,
    ArchiveError,
    ConfigError,
    ExperimentConfig,
    ModelArchive,
    decode_archive,
    encode_archive,
    fingerprint,
    load_config,
    load_model,
    parse_config_text,
    read_field_csv,
    read_series_csv,
    save_model,
    series_csv_text,
    staged_outputs,
    write_field_csv,
    write_series_csv,
)
from scalerc.parallel import KS_DESK, run_closed_loop_parallel, train_parallel
from scalerc.reservoir import IKEDA_TABLE2, MG_TABLE1


def _archive(model, **kw):
    return ModelArchive("desn", model, {"weights_seed": 1}, fingerprint([1.0, 2.0]), **kw)


def test_round_trip_bytes_and_continuation(small_model, tmp_path):
    p = tmp_path / "m.bin"
    save_model(p, small_model, lineage={"weights_seed": 1}, data_hash="abc")
    first = p.read_bytes()
    loaded = load_model(p)
    save_model(tmp_path / "again.bin", loaded)
    assert (tmp_path / "again.bin").read_bytes() == first
    a = run_closed_loop(small_model, 1000).values
    b = run_closed_loop(loaded.model, 1000).values
    assert np.array_equal(a, b)
    assert loaded.lineage == {"weights_seed": 1} and loaded.data_hash == "abc"


def test_rescaled_archive_records_both_delays(small_model):
    back = decode_archive(encode_archive(_archive(set_delay(small_model, 45))))
    assert back.model.D == 45 and back.model.trained_D == 30


def test_parallel_round_trip():
    rng = np.random.default_rng(0)
    p = replace(KS_DESK, G=2, K=40, sparsity=0.1, n_init=20, n_train=60)
    model = train_parallel(rng.standard_normal((20, 81)), p)
    blob = encode_archive(ModelArchive("parallel", model))
    back = decode_archive(blob)
    assert encode_archive(back) == blob
    assert np.array_equal(run_closed_loop_parallel(model, 50).grid,
                          run_closed_loop_parallel(back.model, 50).grid)


def test_corrupt_archives(small_model):
    blob = encode_archive(_archive(small_model))
    with pytest.raises(ArchiveError, match="truncated"):
        decode_archive(blob[: len(blob) // 2])
    with pytest.raises(ArchiveError, match="truncated"):
        decode_archive(blob[:10])
    with pytest.raises(ArchiveError, match="magic"):
        decode_archive(b"X" + blob[1:])
    bumped = struct.pack("<8sI", MAGIC, FORMAT_VERSION + 1) + blob[12:]
    with pytest.raises(ArchiveError, match="format_version"):
        decode_archive(bumped)
    flipped = bytearray(blob)
    flipped[-100] ^= 1
    with pytest.raises(ArchiveError, match="checksum"):
        decode_archive(bytes(flipped))
    with pytest.raises(ArchiveError):
        encode_archive(ModelArchive("parallel", small_model))


def test_fingerprint():
    assert fingerprint([1.0, 2.0]) == fingerprint(np.array([1, 2]))
    assert fingerprint([1.0, 2.0]) != fingerprint([2.0, 1.0])


finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@settings(max_examples=30, deadline=None)
@given(values=st.lists(finite, min_size=1, max_size=50), dt=st.floats(1e-3, 10))
def test_series_csv_round_trip(tmp_path_factory, values, dt):
    path = tmp_path_factory.mktemp("csv") / "s.csv"
    s = ScalarSeries(np.array(values), dt)
    write_series_csv(path, s)
    back = read_series_csv(path)
    assert np.array_equal(back.values, s.values) and back.dt == dt
    assert path.read_text().startswith(f"# dt={dt!r}\n")


def test_field_csv_round_trip(tmp_path):
    grid = np.random.default_rng(0).standard_normal((20, 7))
    f = SpatioTemporalField(grid, 2 * math.pi)
    write_field_csv(tmp_path / "f.csv", f)
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert lines[0].startswith("# dt=0.25 L=") and lines[0].endswith("Q=20")
    assert len(lines) == 8
    back = read_field_csv(tmp_path / "f.csv")
    assert np.array_equal(back.grid, grid) and back.L == f.L
    (tmp_path / "bad.csv").write_text("1.0\n2.0\n")
    with pytest.raises(ValueError, match="header"):
        read_series_csv(tmp_path / "bad.csv")


def test_csv_text_is_stable():
    s = ScalarSeries(np.array([0.1, 1 / 3, 2.0]))
    assert series_csv_text(s) == "# dt=1.0\n0.1\n0.3333333333333333\n2.0\n"


def test_staged_outputs(tmp_path):
    with staged_outputs(tmp_path) as st_:
        st_.path("a.txt").write_text("ok")
    assert (tmp_path / "a.txt").read_text() == "ok"
    with pytest.raises(RuntimeError):
        with staged_outputs(tmp_path) as st_:
            st_.path("b.txt").write_text("partial")
            raise RuntimeError("boom")
    assert sorted(p.name for p in tmp_path.iterdir()) == ["a.txt"]


def test_config_formats_agree(tmp_path):
    kv = "# run\nsystem = mackey-glass\ntau = 100\nK = 500\nalpha = 0.5  # leak\nseed = 3\n"
    js = '{"system": "mackey-glass", "tau": 100, "K": 500, "alpha": 0.5, "seed": 3}'
    a, b = parse_config_text(kv), parse_config_text(js)
    assert a == b
    assert a.desn_params() == replace(MG_TABLE1, K=500, alpha=0.5, seed=3)
    (tmp_path / "c.cfg").write_text(kv)
    assert load_config(tmp_path / "c.cfg") == a
    assert parse_config_text("system = ikeda").desn_params() == IKEDA_TABLE2
    assert parse_config_text("preset = ikeda-table2\nbeta = 0.2").desn_params().beta == 0.2


@pytest.mark.parametrize("text", [
    "bogus = 1",
    "tau = 1\ntau = 2",
    "K = 1.5",
    "K = many",
    "system = lorenz",
    "preset = nope",
    "just words",
    "[1, 2]",
    "{not json",
])
def test_config_rejects(text):
    with pytest.raises(ConfigError):
        parse_config_text(text)


def test_config_as_dict():
    cfg = ExperimentConfig.from_mapping({"tau": 30, "steps": 100, "seed": 2})
    assert cfg.as_dict() == {"seed": 2, "steps": 100, "tau": 30.0}
