import csv

import pytest

from shlight.bench import BENCH_COLUMNS, BenchRow, bench_inference, parse_resolution, write_bench_csv
from shlight.errors import InvalidArgument
from shlight.model import TINY, build_model
from shlight.train import Predictor


@pytest.fixture(scope="module")
def predictor():
    return Predictor(build_model(TINY, seed=0), 1.0)


def test_parse_resolution():
    assert parse_resolution("256x192") == (256, 192)
    assert parse_resolution("1920X1080") == (1920, 1080)
    for bad in ("256", "ax3", "8x8"):
        with pytest.raises(InvalidArgument):
            parse_resolution(bad)


def test_rows(predictor):
    rows = bench_inference(predictor, ["32x24", (40, 30)], [1, 3], repetitions=3, warmup=1)
    assert [(r.resolution, r.batch) for r in rows] == [("32x24", 1), ("32x24", 3), ("40x30", 1), ("40x30", 3)]
    assert all(r.mean_ms > 0 and r.sd_ms >= 0 and r.repetitions == 3 for r in rows)
    assert rows[1].per_frame_ms == pytest.approx(rows[1].mean_ms / 3)
    assert rows[2].pixels == 1200


def test_single_repetition_has_zero_sd(predictor):
    (row,) = bench_inference(predictor, ["32x24"], [1], repetitions=1, warmup=0)
    assert row.sd_ms == 0.0


@pytest.mark.parametrize("kwargs", [{"repetitions": 0}, {"warmup": -1}, {"batches": [0]}])
def test_invalid(predictor, kwargs):
    args = {"resolutions": ["32x24"], "batches": [1], **kwargs}
    with pytest.raises(InvalidArgument):
        bench_inference(predictor, **args)


def test_csv(tmp_path):
    write_bench_csv(tmp_path / "b.csv", [BenchRow("256x192", 1, 12.345678, 0.5, 100)])
    rows = list(csv.reader(open(tmp_path / "b.csv")))
    assert tuple(rows[0]) == BENCH_COLUMNS
    assert rows[1] == ["256x192", "1", "12.3457", "0.5000"]
