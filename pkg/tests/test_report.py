import json
from pathlib import Path

import jsonschema
import numpy as np
import pytest

from conftest import random_data
from rankloss.constraints import check
from rankloss.errors import InvalidInputError
from rankloss.linalg import svd, truncate
from rankloss.network import Dataset, Layer, Network, dataset_loss, gradients
from rankloss.optimizer import CompressionConfig, compress_network, lossless_layer_search
from rankloss.report import (
    drop_rate, emit_report, evaluate, format_drop_rate, load_report, rank_curve, read_curve_csv,
    report_json_text, write_curve_csv)

SCHEMA = json.loads((Path(__file__).parents[1] / "docs" / "report.schema.json").read_text())


@pytest.fixture(scope="module")
def fixture_reports(fixture42):
    out = {}
    for mode in ("lossless", "compact"):
        net, report = compress_network(fixture42.net, fixture42.calib,
                                       CompressionConfig(mode=mode), holdout=fixture42.holdout)
        out[mode] = (net, report)
    return out


def test_drop_rate_examples():
    assert drop_rate(4800, 4800) == 0.0
    assert drop_rate(100 * 100, 100 * 25 + 100 * 25) == 0.5
    assert format_drop_rate(0.68) == "−68.00%"
    assert format_drop_rate(0.0) == "0.00%"
    with pytest.raises(InvalidInputError):
        drop_rate(0, 0)
    with pytest.raises(InvalidInputError):
        drop_rate(10, 11)


def test_parameter_recount(fixture_reports, fixture42):
    for net, report in fixture_reports.values():
        count = 0
        for d in report.layers:
            n, m = d.rows, d.cols
            count += n * d.rank + m * d.rank if d.rank is not None else n * m
        assert count == report.compressed_params == net.param_count
        assert report.original_params == sum(l.weight.size for l in fixture42.net.layers)
        assert report.drop_rate == drop_rate(report.original_params, count)


def test_schema_validates(fixture_reports, tmp_path):
    for _, report in fixture_reports.values():
        jsonschema.validate(json.loads(report_json_text(report)), SCHEMA)
    rng = np.random.default_rng(0)
    tiny = Network(tuple(Layer(rng.standard_normal((2, 2)), np.zeros(2)) for _ in range(2)))
    _, report = compress_network(tiny, random_data(1, 5, 2, 2), CompressionConfig(eps=0.1))
    jsonschema.validate(json.loads(report_json_text(report)), SCHEMA)
    jsonschema.validate(json.loads(report_json_text(report, include_timing=True)), SCHEMA)


def test_empty_report_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    tiny = Network(tuple(Layer(rng.standard_normal((2, 2)), np.zeros(2)) for _ in range(2)))
    _, report = compress_network(tiny, random_data(1, 5, 2, 2), CompressionConfig(eps=0.1))
    emit_report(report, tmp_path / "a.json")
    again = load_report(tmp_path / "a.json")
    emit_report(again, tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    assert load_report(tmp_path / "b.json") == again


def test_fixture_report_round_trip(fixture_reports, tmp_path):
    _, report = fixture_reports["lossless"]
    emit_report(report, tmp_path / "r.json")
    text = (tmp_path / "r.json").read_text()
    assert report_json_text(load_report(tmp_path / "r.json")) == text


def test_csv_report(fixture_reports, tmp_path):
    _, report = fixture_reports["compact"]
    emit_report(report, tmp_path / "r.csv", "csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0].startswith("layer,rows,cols,max_rank,rank,skip_reason")
    assert len(lines) == 1 + len(report.layers)
    with pytest.raises(InvalidInputError):
        emit_report(report, tmp_path / "r.xml", "xml")


def test_unwritable_path_is_reported(fixture_reports, tmp_path):
    _, report = fixture_reports["compact"]
    target = tmp_path / "missing" / "r.json"
    with pytest.raises(OSError, match="missing"):
        emit_report(report, target)


def test_byte_identical_reports(fixture42):
    a = compress_network(fixture42.net, fixture42.calib, holdout=fixture42.holdout)[1]
    b = compress_network(fixture42.net, fixture42.calib, holdout=fixture42.holdout)[1]
    assert report_json_text(a) == report_json_text(b)


def test_curve_on_rank_one_layer_is_flat():
    w = np.outer([1.0, 2.0, 3.0, 4.0, 1.0, 2.0], [1.0, 0.0, -1.0, 2.0, 1.0, 3.0])
    net = Network((Layer(w, np.zeros(6), "tanh"), Layer(np.eye(3, 6), np.zeros(3))))
    data = random_data(2, 20, 6, 3)
    base = dataset_loss(net, data)
    points = rank_curve(net, data, 0, 1e-3)
    assert [p.rank for p in points] == [1, 2]
    for p in points:
        assert p.loss == pytest.approx(base, abs=1e-9)


def test_curve_flags_match_check_and_search(fixture42, tmp_path):
    net, data = fixture42.net, fixture42.calib
    grads = gradients(net, data)
    for i, layer in enumerate(net.layers):
        points = rank_curve(net, data, i, 0.1, grads)
        dec = svd(layer.weight)
        for p in points:
            v = check(layer.weight, truncate(dec, p.rank), grads[i], 0.1)
            assert p.admissible == v.admissible and p.max_abs_noise == v.max_abs_noise
        ok = [p for p in points if p.admissible]
        entry = lossless_layer_search(net, data, grads[i], i, 0.1)
        if ok:
            best = min(ok, key=lambda p: (p.loss, p.rank))
            assert (best.rank, best.loss) == (entry.rank, entry.measured_loss)
        else:
            assert entry is None
        write_curve_csv(points, i, tmp_path / f"c{i}.csv")
        back = read_curve_csv(tmp_path / f"c{i}.csv")
        for (layer_index, q), p in zip(back, points):
            assert layer_index == i and q.rank == p.rank and q.admissible == p.admissible
            assert q.loss == pytest.approx(p.loss, rel=1e-8)
            assert q.max_abs_noise == pytest.approx(p.max_abs_noise, rel=1e-8)


def test_evaluate_examples():
    x = np.array([[5.0, 0.0], [0.0, 5.0], [4.0, -1.0]])
    net = Network((Layer(np.eye(2), np.zeros(2)),))
    assert evaluate(net, Dataset(x, np.array([0, 1, 0]))).top1_accuracy == 1.0
    flat = Network((Layer(np.zeros((2, 2)), np.zeros(2)),))
    labels = np.array([0, 1, 1, 0, 1])
    m = evaluate(flat, Dataset(np.ones((5, 2)), labels))
    assert m.top1_accuracy == pytest.approx(np.mean(labels == 0))
    assert m.top5_accuracy is None and m.n_samples == 5


def test_top5_only_for_many_classes():
    rng = np.random.default_rng(0)
    net = Network((Layer(rng.standard_normal((8, 3)), np.zeros(8)),))
    data = Dataset(rng.standard_normal((50, 3)), rng.integers(0, 8, 50))
    m = evaluate(net, data)
    assert m.top5_accuracy is not None and m.top5_accuracy >= m.top1_accuracy


def test_evaluate_rejects_empty():
    net = Network((Layer(np.eye(2), np.zeros(2)),))
    with pytest.raises(InvalidInputError):
        evaluate(net, Dataset(np.zeros((0, 2)), np.zeros(0, dtype=int)))
