import pytest

from mecsim.catalog import (CatalogSpec, PresentationVariant, Segment, Video, VideoCatalog,
                            generate_synthetic_catalog)


def flat_variant(level, n_frames=60, frame_bytes=100, mse=10.0, fps=30.0):
    return PresentationVariant(level=level, size_bytes=n_frames * frame_bytes,
                               rate_bps=n_frames * frame_bytes * 8 * fps / n_frames,
                               frame_sizes=(frame_bytes,) * n_frames,
                               frame_mse=(mse,) * n_frames, frame_rate=fps)


def tiny_catalog(n_videos=3, n_segments=20, levels=3, frame_bytes=100):
    """Uniform frames; level l has frames l times larger and a lower MSE."""
    videos = []
    for v in range(n_videos):
        vid = f"v{v}"
        segs = []
        for i in range(1, n_segments + 1):
            variants = tuple(flat_variant(l, frame_bytes=frame_bytes * l, mse=40.0 / l)
                             for l in range(1, levels + 1))
            segs.append(Segment(vid, i, 2.0, variants))
        videos.append(Video(vid, tuple(segs)))
    cat = VideoCatalog(tuple(videos), levels=levels)
    cat.validate()
    return cat


@pytest.fixture
def tiny():
    return tiny_catalog()


@pytest.fixture(scope="session")
def synth():
    return generate_synthetic_catalog(CatalogSpec(n_videos=8, segments_min=6, segments_max=12), 3)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "_lines", None) if mod else None
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
