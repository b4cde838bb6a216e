from lfcodec.plotting import plot_loss_trace, plot_rd_curves


def test_rd_figure(tmp_path):
    path = plot_rd_curves({"a": ([0.1, 0.3, 0.2], [30.0, 34.0, 32.0])}, tmp_path / "sub" / "rd.png",
                          title="t", baselines={"b": ([0.1, 0.2], [29.0, 31.0])})
    assert path.is_file() and path.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_loss_figure(tmp_path):
    trace = [{"step": i, "J": 1.0 / (i + 1), "D": 0.5 / (i + 1), "R_bpp": 0.2, "lr": 1e-3} for i in range(20)]
    path = plot_loss_trace(trace, tmp_path / "loss.pdf")
    assert path.stat().st_size > 0
