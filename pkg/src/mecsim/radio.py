"""MCS table, BLER curves, per-RB channel realizations and link capacity."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

# 4-bit CQI spectral efficiencies (bits per resource element), 3GPP TS 36.213
# Table 7.2.3-1; standard-derived, not measured data.
CQI_EFFICIENCY = (
    0.1523, 0.2344, 0.3770, 0.6016, 0.8770, 1.1758, 1.4766, 1.9141,
    2.4063, 2.7305, 3.3223, 3.9023, 4.5234, 5.1152, 5.5547,
)
# approximate 10%-BLER SNR thresholds (dB) for the same CQI indices
CQI_SNR_10PCT = (
    -6.7, -4.7, -2.3, 0.2, 2.4, 4.3, 5.9, 8.1,
    10.3, 11.7, 14.1, 16.3, 18.7, 21.0, 22.7,
)


@dataclass(frozen=True)
class McsTable:
    """MCS entries m = 1..M.

    ``bits[m-1]`` is r_m, bits carried by one RB over one scheduling period;
    BLER at MCS m is ``1 / (1 + exp(slope * (snr - midpoint[m-1])))``.
    """

    bits: tuple[float, ...]
    midpoint_db: tuple[float, ...]
    slope: tuple[float, ...]

    def __post_init__(self):
        if not (len(self.bits) == len(self.midpoint_db) == len(self.slope) >= 1):
            raise ValueError("MCS table columns must be equal length and nonempty")
        if any(b2 <= b1 for b1, b2 in zip(self.bits, self.bits[1:])):
            raise ValueError("r_m must strictly increase with m")
        if any(m2 <= m1 for m1, m2 in zip(self.midpoint_db, self.midpoint_db[1:])):
            raise ValueError("BLER midpoints must strictly increase with m")
        if any(s <= 0 for s in self.slope):
            raise ValueError("BLER slopes must be positive")
        object.__setattr__(self, "_r", np.asarray(self.bits, dtype=float))
        object.__setattr__(self, "_mid", np.asarray(self.midpoint_db, dtype=float))
        object.__setattr__(self, "_slope", np.asarray(self.slope, dtype=float))

    @property
    def size(self) -> int:
        return len(self.bits)

    def r(self, m: int) -> float:
        return self.bits[m - 1]

    @classmethod
    def default(cls, re_per_rb: int = 120, ttis_per_period: int = 50,
                slope: float = 1.5) -> "McsTable":
        """15-entry table scaled to one RB over a whole TD period."""
        bits = tuple(e * re_per_rb * ttis_per_period for e in CQI_EFFICIENCY)
        # shift the 10% point to the 50% point of the logistic
        shift = np.log(9.0) / slope
        mids = tuple(float(t - shift) for t in CQI_SNR_10PCT)
        return cls(bits, mids, (slope,) * len(bits))

    def save(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["m", "r_bits", "midpoint_snr_db", "slope"])
            for m in range(1, self.size + 1):
                w.writerow([m, repr(float(self.bits[m - 1])), repr(float(self.midpoint_db[m - 1])),
                            repr(float(self.slope[m - 1]))])

    @classmethod
    def load(cls, path) -> "McsTable":
        rows = []
        with open(path, newline="") as fh:
            for lineno, row in enumerate(csv.DictReader(fh), start=2):
                try:
                    rows.append((int(row["m"]), float(row["r_bits"]),
                                 float(row["midpoint_snr_db"]), float(row["slope"])))
                except (KeyError, TypeError, ValueError) as exc:
                    raise ValueError(f"{path}: bad MCS record on line {lineno}") from exc
        rows.sort()
        if [r[0] for r in rows] != list(range(1, len(rows) + 1)):
            raise ValueError(f"{path}: MCS indices must be 1..M")
        return cls(tuple(r[1] for r in rows), tuple(r[2] for r in rows),
                   tuple(r[3] for r in rows))


def bler(snr_db, m: int, table: McsTable):
    """Block error rate of MCS m at the given SNR (scalar or array)."""
    x = table.slope[m - 1] * (np.asarray(snr_db, dtype=float) - table.midpoint_db[m - 1])
    # logistic via tanh: no overflow for large |x|
    out = 0.5 * (1.0 - np.tanh(0.5 * x))
    return float(out) if out.ndim == 0 else out


def bler_all(snr_db, table: McsTable) -> np.ndarray:
    """BLER for every MCS; trailing axis indexes m-1."""
    snr = np.asarray(snr_db, dtype=float)[..., None]
    return 0.5 * (1.0 - np.tanh(0.5 * table._slope * (snr - table._mid)))


def effective_snr(snr_per_rb) -> float:
    """Mean of per-RB SNR in dB (simplified effective-SNR mapping)."""
    vals = np.asarray(snr_per_rb, dtype=float)
    if vals.size == 0:
        raise ValueError("effective SNR of an empty RB set is undefined")
    return float(vals.mean())


def best_mcs_at(snr_db: float, table: McsTable) -> tuple[int, float]:
    """(m*, per-RB expected goodput) maximizing (1 - E_m) * r_m; ties -> smaller m."""
    goodput = (1.0 - bler_all(snr_db, table)) * table._r
    idx = int(np.argmax(goodput))  # argmax returns the first maximum
    return idx + 1, float(goodput[idx])


def best_mcs_vec(snr_db: np.ndarray, table: McsTable) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized best_mcs_at over an array of effective SNRs."""
    goodput = (1.0 - bler_all(snr_db, table)) * table._r
    idx = np.argmax(goodput, axis=-1)
    return idx + 1, np.take_along_axis(goodput, idx[..., None], axis=-1)[..., 0]


def select_mcs(snr_per_rb, table: McsTable) -> tuple[int, float]:
    """Optimal MCS for an RB set and the set's expected goodput in bits/period."""
    snr = np.asarray(snr_per_rb, dtype=float)
    m, per_rb = best_mcs_at(effective_snr(snr), table)
    return m, snr.size * per_rb


def capacity(rb_count: int, m: int, table: McsTable) -> float:
    """Raw bits per period carried by `rb_count` RBs at MCS m."""
    return rb_count * table.r(m)


@dataclass
class ChannelModel:
    """Log-distance pathloss + fixed log-normal shadowing + per-RB Rayleigh fading.

    SNR(dB) = ref_snr_db - 10 * exponent * log10(d / ref_distance_m)
              + shadowing + 10 log10(|h|^2),  |h|^2 ~ Exp(1)
    """

    n_rbs: int = 100
    ref_snr_db: float = 20.0
    ref_distance_m: float = 100.0
    exponent: float = 3.5
    shadow_sigma_db: float = 8.0
    min_distance_m: float = 30.0

    def mean_snr_db(self, distance_m, shadow_db) -> np.ndarray:
        d = np.maximum(np.asarray(distance_m, dtype=float), self.min_distance_m)
        return (self.ref_snr_db - 10.0 * self.exponent * np.log10(d / self.ref_distance_m)
                + np.asarray(shadow_db, dtype=float))

    def realize(self, seed: int, period: int, mean_snr_db: np.ndarray) -> np.ndarray:
        """(clients x RBs) SNR matrix; reproducible from (seed, period)."""
        rng = np.random.default_rng([seed, 7, period])
        fading = rng.exponential(1.0, size=(len(mean_snr_db), self.n_rbs))
        return mean_snr_db[:, None] + 10.0 * np.log10(np.maximum(fading, 1e-12))
