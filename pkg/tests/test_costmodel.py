import pytest

from src.costmodel.analytic import (
    FLOPS_CONVENTION,
    GIB,
    MemoryBreakdown,
    attention_flops,
    cost_report,
    score_flops,
    score_floats,
    static_memory,
)
from src.costmodel.profiler import MeasuredPoint, measure_training_step, profile_activation
from src.costmodel.regression import (
    BERT_BASE_ACTIVATION_LINE,
    BERT_BASE_TOKENS_PER_BATCH,
    RegressionFit,
    memory_saving,
    reduction_table,
    regress_activation,
)
from src.costmodel.report import (
    REPORT_COLUMNS,
    cost_report_rows,
    format_cost_table,
    format_reduction_table,
    reduction_rows,
    to_frame,
    write_report_csv,
)
from src.costmodel.tracker import AllocationTracker
from src.encoder.config import ModelConfig, bert_base
from src.errors import (
    ArgumentError,
    PaddingRequiredError,
    PoorFitError,
    ProfilingError,
    SimulatedOOMError,
)


def test_tracker_peak_and_tags():
    tracker = AllocationTracker()
    tracker.allocate(100, "cache")   # disabled: ignored
    with tracker.session():
        tracker.register_static(1000)
        tracker.allocate(64, "scores")
        tracker.allocate(32, "transient")
        tracker.release(32, "transient")
        tracker.allocate(16, "cache")
        snap = tracker.snapshot()
    assert snap.live_bytes == 1080
    assert snap.peak_bytes == 1096
    assert snap.static_bytes == 1000
    assert snap.activation_bytes == 96
    assert snap.peak_by_tag == {"static": 1000, "scores": 64, "transient": 32, "cache": 16}
    assert not tracker.enabled


def test_tracker_reset_peak_and_budget():
    tracker = AllocationTracker()
    with tracker.session(budget_bytes=100):
        tracker.allocate(80, "cache")
        tracker.release(80, "cache")
        tracker.reset_peak()
        tracker.allocate(10, "cache")
        assert tracker.snapshot().peak_bytes == 10
        with pytest.raises(SimulatedOOMError) as info:
            tracker.allocate(95, "scores")
    assert info.value.requested == 95 and info.value.budget == 100


def test_tracker_sessions_do_not_nest():
    tracker = AllocationTracker()
    with tracker.session():
        with pytest.raises(ProfilingError):
            with tracker.session():
                pass


def test_profile_activation_needs_session():
    with pytest.raises(ProfilingError):
        profile_activation(lambda: None, AllocationTracker())


def test_profile_activation_reports_run_peak():
    tracker = AllocationTracker()

    def run():
        tracker.allocate(500, "scores")
        tracker.release(500, "scores")

    with tracker.session():
        tracker.register_static(200)
        profile = profile_activation(run, tracker)
    assert profile.activation_bytes == 500
    assert profile.score_bytes == 500
    assert profile.static_bytes == 200


def test_score_counts():
    assert score_floats(512, 1) == 512 * 512
    assert score_floats(512, 2) == 131072
    assert score_flops(512, 64) == 2 * 512 * 512 * 64
    assert attention_flops(512, 64, 12, 12, 1) == 2 * attention_flops(512, 64, 12, 12, 2)
    assert attention_flops(510, 64, 12, 12, 1) == 3 * attention_flops(510, 64, 12, 12, 3)
    with pytest.raises(PaddingRequiredError):
        score_floats(10, 3)
    with pytest.raises(ArgumentError):
        score_floats(0, 1)


def test_cost_report_reduction_factor():
    for n in (1, 2, 3):
        report = cost_report(bert_base(seq_len=1024, num_blocks=n) if n != 3 else bert_base(1023, 3))
        assert report.reduction_factor == pytest.approx(n)
    report = cost_report(bert_base(512, 2))
    assert report.attention_score_floats == 512 * 512 // 2 * 12 * 12
    assert report.total_flops == report.attention_flops + report.projection_flops + report.ffn_flops


def test_static_memory_of_bert_base():
    mem = static_memory(bert_base())
    assert mem.model_bytes == 2 * 108_920_634
    assert mem.model_bytes / GIB == pytest.approx(0.203, abs=5e-4)
    assert mem.optimizer_bytes == 3 * mem.model_bytes
    assert static_memory(10, optimizer_multiplier=5).total_bytes == 120
    assert mem.gib()["total"] == pytest.approx(4 * mem.model_bytes / GIB)


def test_static_memory_errors():
    with pytest.raises(ArgumentError):
        static_memory(10, optimizer_multiplier=4)
    with pytest.raises(ArgumentError):
        static_memory(-1)
    with pytest.raises(ArgumentError):
        MemoryBreakdown(activation_bytes=-1)


def reference_rows(static=0.0):
    fit = RegressionFit.from_line(BERT_BASE_ACTIVATION_LINE, BERT_BASE_TOKENS_PER_BATCH)
    return reduction_table(fit, [512, 1024], (1, 2, 3), static)


def test_reduction_table_from_reference_line():
    rows = reference_rows()
    by_key = {(r.seq_len, r.num_blocks): r for r in rows}
    assert by_key[512, 1].batch_size == 8 and by_key[1024, 1].batch_size == 4
    assert all(r.linear_est == pytest.approx(4.83) for r in rows)
    expected = {(512, 1): 3.66, (512, 2): 1.83, (512, 3): 1.22,
                (1024, 1): 7.32, (1024, 2): 3.66, (1024, 3): 2.44}
    for key, value in expected.items():
        assert round(by_key[key].quadratic_est, 2) == pytest.approx(value)
    assert by_key[512, 2].model == "BlockBERT n=2" and by_key[512, 1].model == "BERT"


def test_memory_saving():
    rows = reference_rows(static=1.0)
    dense, half = rows[0], rows[1]
    assert memory_saving(dense, dense) == 0.0
    assert memory_saving(half, dense) == pytest.approx(1.0 - (5.83 + 1.8304) / (5.83 + 3.6608))


def synthetic_points(a2, a1, a0, T, seq_lens):
    return [MeasuredPoint(N, T // N, a2 * (T // N) * N * N + a1 * (T // N) * N + a0) for N in seq_lens]


def test_regression_recovers_coefficients():
    fit = regress_activation(synthetic_points(2e-3, 0.5, 7.0, 4096, [128, 256, 512, 1024]), require_r2=0.999)
    assert fit.tokens_per_batch == 4096
    assert fit.a2 == pytest.approx(2e-3)
    assert fit.linear_term == pytest.approx(4096 * 0.5 + 7.0)
    assert fit.r_squared == pytest.approx(1.0)
    assert fit.predict(256, 2) == pytest.approx(fit.slope * 128 + fit.linear_term)


def test_regression_input_checks():
    with pytest.raises(ArgumentError):
        regress_activation([])
    with pytest.raises(ArgumentError):
        regress_activation(synthetic_points(1e-3, 1.0, 0.0, 4096, [256, 512]))
    mixed = synthetic_points(1e-3, 1.0, 0.0, 4096, [128, 256]) + [MeasuredPoint(512, 4, 1.0)]
    with pytest.raises(ArgumentError):
        regress_activation(mixed)


def test_regression_rejects_poor_fit():
    points = [MeasuredPoint(N, 1024 // N, y) for N, y in ((64, 0.0), (128, 100.0), (256, 0.0), (512, 100.0))]
    assert regress_activation(points).r_squared < 0.9
    with pytest.raises(PoorFitError):
        regress_activation(points, require_r2=0.99)


def tiny_model(N, n):
    return ModelConfig(num_layers=1, hidden=8, num_heads=2, seq_len=N, num_blocks=n, vocab_size=16)


def test_measured_activation_is_linear_in_sequence_length():
    T = 128
    fits = {}
    for n in (1, 2):
        points = [measure_training_step(tiny_model(N, n), T // N) for N in (16, 32, 64)]
        fits[n] = regress_activation(points)
        assert fits[n].r_squared == pytest.approx(1.0, abs=1e-9)
        for p in points:
            assert p.score_bytes == p.batch_size * 2 * p.seq_len * p.seq_len // n * 8
    assert fits[1].slope / fits[2].slope == pytest.approx(2.0, rel=1e-9)
    assert fits[1].linear_term == pytest.approx(fits[2].linear_term, rel=1e-9)


def test_measurement_respects_budget():
    with pytest.raises(SimulatedOOMError):
        measure_training_step(tiny_model(16, 1), 8, budget_bytes=1)


def test_report_frames_and_tables(tmp_path):
    rows = cost_report_rows("bert_base", cost_report(bert_base(512, 2)))
    rows += reduction_rows("bert_base", reference_rows())
    frame = to_frame(rows)
    assert list(frame.columns) == REPORT_COLUMNS
    write_report_csv(frame, tmp_path / "report.csv")
    lines = (tmp_path / "report.csv").read_text().splitlines()
    assert lines[0] == "config,N,n,metric,value"
    assert len(lines) == len(rows) + 1

    table = format_cost_table(to_frame(cost_report_rows("bert_base", cost_report(bert_base(512, 2)))))
    assert FLOPS_CONVENTION in table and "attention_flops" in table

    text = format_reduction_table(reference_rows())
    assert "BlockBERT n=2" in text and "O(N) GB" in text and "4.83" in text


def test_measured_point_includes_score_buffers():
    p = measure_training_step(tiny_model(16, 2), 2)
    assert p.activation_bytes > p.score_bytes > 0
