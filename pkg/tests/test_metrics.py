import pytest

from airalloc.metrics import (
    BENCH_METHODS,
    LatencyRow,
    energy_efficiency,
    jain_index,
    latency_benchmark,
)


def test_jain_index_values():
    assert jain_index([1.0, 2.0, 3.0]) == pytest.approx(6.0 / 7.0, rel=1e-15)
    assert jain_index([4.0, 4.0, 4.0, 4.0]) == pytest.approx(1.0, rel=1e-15)
    # One user hoarding everything bottoms out at 1/n.
    assert jain_index([9.0, 0.0, 0.0]) == pytest.approx(1.0 / 3.0, rel=1e-15)
    assert jain_index([0.7]) == 1.0


def test_jain_index_rejects_degenerate_input():
    with pytest.raises(ValueError):
        jain_index([])
    with pytest.raises(ValueError):
        jain_index([1.0, -0.5])
    with pytest.raises(ValueError):
        jain_index([0.0, 0.0])


def test_energy_efficiency():
    assert energy_efficiency(1e6, 0.5) == pytest.approx(2e6)
    assert energy_efficiency(0.0, 1.0) == 0.0
    with pytest.raises(ValueError):
        energy_efficiency(1e6, 0.0)
    with pytest.raises(ValueError):
        energy_efficiency(-1.0, 1.0)


def test_latency_benchmark_rows():
    rows = latency_benchmark(
        methods=("bcd_mm2", "gradient_descent", "dqn_inference"),
        server_grid=(1,),
        repetitions=2,
        seed=0,
    )
    assert len(rows) == 3
    for row in rows:
        assert isinstance(row, LatencyRow)
        assert row.method in BENCH_METHODS
        assert row.n_servers == 1
        assert row.median_s > 0.0
        assert row.repetitions == 2


def test_latency_benchmark_rejects_unknown_method():
    with pytest.raises(ValueError):
        latency_benchmark(methods=("simulated_annealing",), server_grid=(1,), repetitions=1)
