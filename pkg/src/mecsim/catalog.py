"""Video catalog: videos -> segments -> presentation variants.

Level 1 is the lowest bitrate.  Per-frame sizes and per-frame MSE values are
catalog inputs; nothing here touches pixels.
"""
from __future__ import annotations

import bisect
import csv
import math
from dataclasses import dataclass, field
from itertools import accumulate
from pathlib import Path

import numpy as np

HEAD_FRACTION = 0.15
MAX_MSE = 255.0 ** 2

CATALOG_COLUMNS = (
    "video_id",
    "segment_index",
    "level",
    "size_bytes",
    "rate_bps",
    "duration_s",
    "frame_sizes",
    "frame_mse",
)


class CatalogError(ValueError):
    """Catalog file could not be parsed or violates an invariant."""


def head_segment_count(n_f: int) -> int:
    """Number of head segments (first 15% of the video), ceil(0.15 * n_f)."""
    if n_f < 1:
        raise ValueError("n_f must be >= 1")
    # integer form of ceil(0.15 * n) avoids 0.15*20 = 3.0000000000000004
    return -(-n_f * 15 // 100)


@dataclass(frozen=True, eq=False)
class PresentationVariant:
    level: int
    size_bytes: int
    rate_bps: float
    frame_sizes: tuple[int, ...]
    frame_mse: tuple[float, ...]
    frame_rate: float = 30.0

    def __post_init__(self):
        # prefix sums drive ST() and the PSNR gain; cache them once
        cum = tuple(accumulate(self.frame_sizes))
        psnr = [10.0 * math.log10(MAX_MSE / m) for m in self.frame_mse]
        object.__setattr__(self, "cum_sizes", cum)
        object.__setattr__(self, "cum_psnr", (0.0,) + tuple(accumulate(psnr)))
        object.__setattr__(self, "cum_sizes_arr", np.asarray(cum, dtype=float))
        object.__setattr__(self, "cum_psnr_arr", np.asarray(self.cum_psnr, dtype=float))

    def __eq__(self, other):
        if not isinstance(other, PresentationVariant):
            return NotImplemented
        return (
            self.level == other.level
            and self.size_bytes == other.size_bytes
            and self.rate_bps == other.rate_bps
            and self.frame_sizes == other.frame_sizes
            and self.frame_mse == other.frame_mse
            and self.frame_rate == other.frame_rate
        )

    __hash__ = None

    @property
    def n_frames(self) -> int:
        return len(self.frame_sizes)

    @property
    def duration_s(self) -> float:
        return self.n_frames / self.frame_rate

    @property
    def mean_mse(self) -> float:
        return float(np.mean(self.frame_mse))

    def frames_complete(self, nbytes: float) -> int:
        """Count of whole frames whose prefix sum fits in `nbytes`."""
        return bisect.bisect_right(self.cum_sizes, nbytes)


@dataclass(frozen=True)
class Segment:
    video_id: str
    index: int
    duration_s: float
    variants: tuple[PresentationVariant, ...]

    def variant(self, level: int) -> PresentationVariant:
        return self.variants[level - 1]

    @property
    def levels(self) -> int:
        return len(self.variants)


@dataclass(frozen=True)
class Video:
    video_id: str
    segments: tuple[Segment, ...]

    @property
    def n_segments(self) -> int:
        return len(self.segments)

    @property
    def head_count(self) -> int:
        return head_segment_count(self.n_segments)

    def segment(self, index: int) -> Segment:
        return self.segments[index - 1]


@dataclass(frozen=True)
class VideoCatalog:
    videos: tuple[Video, ...]
    frame_rate: float = 30.0
    levels: int = 5
    _by_id: dict = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        ids = [v.video_id for v in self.videos]
        if len(set(ids)) != len(ids):
            raise CatalogError("duplicate video_id in catalog")
        object.__setattr__(self, "_by_id", {v.video_id: v for v in self.videos})

    def video(self, video_id: str) -> Video:
        return self._by_id[video_id]

    def segment(self, video_id: str, index: int) -> Segment:
        return self._by_id[video_id].segments[index - 1]

    def variant(self, video_id: str, index: int, level: int) -> PresentationVariant:
        return self._by_id[video_id].segments[index - 1].variants[level - 1]

    @property
    def video_ids(self) -> list[str]:
        return [v.video_id for v in self.videos]

    def head_segments(self, video_id: str) -> int:
        return self._by_id[video_id].head_count

    def total_bytes(self) -> int:
        return sum(
            var.size_bytes
            for v in self.videos
            for s in v.segments
            for var in s.variants
        )

    def mean_segment_bytes(self, video_id: str) -> float:
        v = self._by_id[video_id]
        return float(np.mean([var.size_bytes for s in v.segments for var in s.variants]))

    def validate(self) -> None:
        for v in self.videos:
            for s in v.segments:
                validate_segment(s, self.levels)


def validate_variant(var: PresentationVariant, where: str = "") -> None:
    if len(var.frame_sizes) != len(var.frame_mse):
        raise CatalogError(f"{where}: frame_sizes and frame_mse lengths differ")
    if not var.frame_sizes:
        raise CatalogError(f"{where}: variant has no frames")
    if sum(var.frame_sizes) != var.size_bytes:
        raise CatalogError(
            f"{where}: sum(frame_sizes)={sum(var.frame_sizes)} != size_bytes={var.size_bytes}"
        )
    if any(fs < 0 for fs in var.frame_sizes):
        raise CatalogError(f"{where}: negative frame size")
    if any(not (0.0 < m <= MAX_MSE) for m in var.frame_mse):
        raise CatalogError(f"{where}: frame_mse outside (0, 255^2]")
    if not var.rate_bps > 0:
        raise CatalogError(f"{where}: rate_bps must be positive")


def validate_segment(seg: Segment, levels: int) -> None:
    where = f"video {seg.video_id} segment {seg.index}"
    if seg.levels != levels:
        raise CatalogError(f"{where}: expected {levels} variants, got {seg.levels}")
    if [v.level for v in seg.variants] != list(range(1, levels + 1)):
        raise CatalogError(f"{where}: variant levels must be 1..{levels}")
    for var in seg.variants:
        validate_variant(var, f"{where} level {var.level}")
        if not math.isclose(var.duration_s, seg.duration_s, rel_tol=1e-9):
            raise CatalogError(f"{where} level {var.level}: duration mismatch")
    for lo, hi in zip(seg.variants, seg.variants[1:]):
        if not (hi.size_bytes > lo.size_bytes and hi.rate_bps > lo.rate_bps):
            raise CatalogError(f"{where}: size/rate must increase with level")
        if not hi.mean_mse < lo.mean_mse:
            raise CatalogError(f"{where}: mean MSE must decrease with level")


@dataclass
class CatalogSpec:
    """Parameters for a synthetic rate-distortion catalog.

    Per-frame MSE follows ``rd_a * (rate_kbps * complexity) ** -rd_b``; each
    video draws a content complexity factor so videos differ in quality at
    equal rate.
    """

    n_videos: int = 16
    segments_min: int = 10
    segments_max: int = 30
    levels: int = 5
    frame_rate: float = 30.0
    frames_per_segment: int = 60
    base_rate_min_bps: float = 300e3
    base_rate_max_bps: float = 600e3
    rate_growth: float = 1.4
    rd_a: float = 20000.0
    rd_b: float = 1.0
    complexity_min: float = 0.7
    complexity_max: float = 1.3
    mse_jitter: float = 0.15
    size_jitter: float = 0.2
    iframe_weight: float = 5.0

    def validate(self) -> None:
        if self.levels < 2:
            raise ValueError("catalog needs at least 2 presentation levels")
        if self.base_rate_min_bps <= 0 or self.base_rate_max_bps <= 0:
            raise ValueError("rates must be positive")
        if self.base_rate_max_bps < self.base_rate_min_bps:
            raise ValueError("base_rate_max_bps < base_rate_min_bps")
        if self.rate_growth <= 1.0:
            raise ValueError("rate_growth must exceed 1 so rates increase with level")
        if self.n_videos < 0 or self.segments_min < 1 or self.segments_max < self.segments_min:
            raise ValueError("bad video/segment counts")
        if self.frames_per_segment < 1 or self.frame_rate <= 0:
            raise ValueError("bad frame parameters")
        if self.rd_a <= 0 or self.rd_b <= 0:
            raise ValueError("R-D coefficients must be positive")


def _split_bytes(total: int, weights: np.ndarray) -> tuple[int, ...]:
    """Integer split of `total` proportional to `weights` (largest remainder)."""
    raw = total * weights / weights.sum()
    base = np.floor(raw).astype(np.int64)
    short = total - int(base.sum())
    order = np.argsort(-(raw - base), kind="stable")
    base[order[:short]] += 1
    return tuple(int(b) for b in base)


def level_rates(base_rate_bps: float, growth: float, levels: int) -> list[float]:
    return [base_rate_bps * growth ** (l - 1) for l in range(1, levels + 1)]


def generate_synthetic_catalog(spec: CatalogSpec, seed: int) -> VideoCatalog:
    spec.validate()
    rng = np.random.default_rng(seed)
    fps, nfr = spec.frame_rate, spec.frames_per_segment
    duration = nfr / fps
    videos = []
    for v in range(spec.n_videos):
        vid = f"v{v:03d}"
        n_seg = int(rng.integers(spec.segments_min, spec.segments_max + 1))
        base = float(rng.uniform(spec.base_rate_min_bps, spec.base_rate_max_bps))
        complexity = float(rng.uniform(spec.complexity_min, spec.complexity_max))
        rates = level_rates(base, spec.rate_growth, spec.levels)
        segments = []
        for i in range(1, n_seg + 1):
            # one jitter pattern per segment shared by all levels, normalized to
            # mean 1, so segment-mean MSE sits exactly on the R-D curve
            mse_pat = np.exp(spec.mse_jitter * rng.standard_normal(nfr))
            mse_pat /= mse_pat.mean()
            size_w = np.exp(spec.size_jitter * rng.standard_normal(nfr))
            size_w[0] *= spec.iframe_weight
            variants = []
            for l, r in enumerate(rates, start=1):
                size = int(round(r * duration / 8.0))
                mean_mse = spec.rd_a * (r / 1e3 * complexity) ** (-spec.rd_b)
                mse = np.clip(mean_mse * mse_pat, 1e-6, MAX_MSE)
                variants.append(
                    PresentationVariant(
                        level=l,
                        size_bytes=size,
                        rate_bps=r,
                        frame_sizes=_split_bytes(size, size_w),
                        frame_mse=tuple(float(x) for x in mse),
                        frame_rate=fps,
                    )
                )
            segments.append(Segment(vid, i, duration, tuple(variants)))
        videos.append(Video(vid, tuple(segments)))
    cat = VideoCatalog(tuple(videos), frame_rate=fps, levels=spec.levels)
    cat.validate()
    return cat


def save_catalog(catalog: VideoCatalog, path) -> None:
    """Write one CSV row per (video_id, segment_index, level)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CATALOG_COLUMNS)
        for v in catalog.videos:
            for s in v.segments:
                for var in s.variants:
                    w.writerow(
                        [
                            v.video_id,
                            s.index,
                            var.level,
                            var.size_bytes,
                            repr(var.rate_bps),
                            repr(s.duration_s),
                            ";".join(str(x) for x in var.frame_sizes),
                            ";".join(repr(x) for x in var.frame_mse),
                        ]
                    )


def _field(row: dict, name: str, conv, lineno: int):
    raw = row.get(name)
    if raw is None or raw == "":
        raise CatalogError(f"record {lineno}: missing field {name!r}")
    try:
        return conv(raw)
    except ValueError as exc:
        raise CatalogError(f"record {lineno}: bad value for field {name!r}: {raw!r}") from exc


def _int_list(raw: str) -> tuple[int, ...]:
    return tuple(int(x) for x in raw.split(";"))


def _float_list(raw: str) -> tuple[float, ...]:
    return tuple(float(x) for x in raw.split(";"))


def load_catalog(path) -> VideoCatalog:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise CatalogError(f"{path}: empty file, header row required")
        missing = [c for c in CATALOG_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise CatalogError(f"{path}: header is missing fields {missing}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            rows.append(
                (
                    _field(row, "video_id", str, lineno),
                    _field(row, "segment_index", int, lineno),
                    _field(row, "level", int, lineno),
                    _field(row, "size_bytes", int, lineno),
                    _field(row, "rate_bps", float, lineno),
                    _field(row, "duration_s", float, lineno),
                    _field(row, "frame_sizes", _int_list, lineno),
                    _field(row, "frame_mse", _float_list, lineno),
                    lineno,
                )
            )
    if not rows:
        return VideoCatalog((), levels=0)

    grouped: dict[str, dict[int, dict[int, tuple]]] = {}
    for r in rows:
        grouped.setdefault(r[0], {}).setdefault(r[1], {})[r[2]] = r
    levels = max(r[2] for r in rows)
    frame_rate = None
    videos = []
    for vid, segs in grouped.items():
        if sorted(segs) != list(range(1, len(segs) + 1)):
            raise CatalogError(f"video {vid}: segment indices must be 1..N")
        seg_objs = []
        for idx in sorted(segs):
            by_level = segs[idx]
            variants = []
            duration = None
            for lvl in sorted(by_level):
                (_, _, _, size, rate, dur, fsz, fmse, lineno) = by_level[lvl]
                fr = len(fsz) / dur
                frame_rate = fr if frame_rate is None else frame_rate
                var = PresentationVariant(lvl, size, rate, fsz, fmse, fr)
                validate_variant(var, f"record {lineno}")
                variants.append(var)
                duration = dur
            seg = Segment(vid, idx, duration, tuple(variants))
            validate_segment(seg, levels)
            seg_objs.append(seg)
        videos.append(Video(vid, tuple(seg_objs)))
    return VideoCatalog(tuple(videos), frame_rate=frame_rate, levels=levels)
