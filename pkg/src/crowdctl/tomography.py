"""Simulated process tomography on one 2x2 block.

Pipeline: ideal preparation of |0>, |1>, |+>, |+i>; the channel; projective
measurement in the Z, X or Y basis where the +1 outcome is "bright"; Poisson
photon counts; thresholding; maximum-likelihood state estimates; linear
inversion to chi; projection onto physical chi; normalised overlap with the
ideal chi; bootstrap over shots.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, NamedTuple, Sequence

import numpy as np

from .linalg import PAULI_BASIS, require_unitary

BRIGHT_MEAN = 25.0
DARK_MEAN = 0.2
THRESHOLD = 5  # counts >= THRESHOLD read as bright
DEFAULT_TRIALS = 1000

MLE_TOL = 1e-10
MLE_MAX_ITER = 10_000

_S2 = 1.0 / math.sqrt(2.0)
PREP_STATES = {
    "0": np.array([1.0, 0.0], dtype=complex),
    "1": np.array([0.0, 1.0], dtype=complex),
    "+": np.array([_S2, _S2], dtype=complex),
    "-": np.array([_S2, -_S2], dtype=complex),
    "+i": np.array([_S2, 1j * _S2], dtype=complex),
    "-i": np.array([_S2, -1j * _S2], dtype=complex),
}
STANDARD_PREPS = ("0", "1", "+", "+i")
BASES = ("Z", "X", "Y")
# Bloch-vector component measured by each basis
_AXIS = {"X": 0, "Y": 1, "Z": 2}
_BRIGHT_STATE = {"Z": PREP_STATES["0"], "X": PREP_STATES["+"], "Y": PREP_STATES["+i"]}


def _normalise_label(label: str) -> str:
    key = label.strip().replace("|", "").replace(">", "").replace("⟩", "")
    if key not in PREP_STATES:
        raise ValueError(f"unknown preparation {label!r}; expected one of {sorted(PREP_STATES)}")
    return key


def prep_density(label: str) -> np.ndarray:
    psi = PREP_STATES[_normalise_label(label)]
    return np.outer(psi, psi.conj())


@dataclass(frozen=True)
class ProcessMatrix:
    """chi in the {I, X, Y, Z} basis with Tr(E_j^dag E_k) = 2 delta_jk."""

    chi: np.ndarray
    subspace: str = ""

    def __post_init__(self):
        chi = np.asarray(self.chi, dtype=complex)
        if chi.shape != (4, 4):
            raise ValueError("chi must be 4x4")
        if np.max(np.abs(chi - chi.conj().T)) > 1e-8:
            raise ValueError("chi is not Hermitian")
        lam = np.linalg.eigvalsh(0.5 * (chi + chi.conj().T))
        if lam[0] < -1e-6:
            raise ValueError(f"chi has a negative eigenvalue {lam[0]:.2e}")
        if abs(np.trace(chi).real - 1.0) > 1e-6:
            raise ValueError(f"Tr chi = {np.trace(chi).real:.8f}, expected 1")
        object.__setattr__(self, "chi", chi)

    def to_dict(self) -> dict:
        return {"subspace": self.subspace, "re": self.chi.real.tolist(), "im": self.chi.imag.tolist()}


def chi_of_unitary(u) -> ProcessMatrix:
    """chi_jk = a_j a_k^* with a_j = Tr(E_j^dag U) / 2."""
    u = require_unitary(u, 1e-8, "u")
    a = np.array([np.trace(e.conj().T @ u) / 2.0 for e in PAULI_BASIS])
    return ProcessMatrix(np.outer(a, a.conj()))


def apply_chi(chi, rho) -> np.ndarray:
    chi = np.asarray(chi)
    out = np.zeros((2, 2), dtype=complex)
    for j, ej in enumerate(PAULI_BASIS):
        for k, ek in enumerate(PAULI_BASIS):
            out += chi[j, k] * ej @ rho @ ek.conj().T
    return out


def unitary_channel(u) -> Callable[[np.ndarray], np.ndarray]:
    u = np.asarray(u, dtype=complex)
    return lambda rho: u @ rho @ u.conj().T


def superoperator_channel(s2) -> Callable[[np.ndarray], np.ndarray]:
    """Channel from a 4x4 column-stacked superoperator of one block."""
    s2 = np.asarray(s2, dtype=complex)
    return lambda rho: (s2 @ np.asarray(rho).reshape(-1, order="F")).reshape(2, 2, order="F")


def process_fidelity(chi_exp, chi_ideal) -> float:
    """|Tr(chi_exp chi_ideal)| / sqrt(Tr(chi_exp chi_exp^dag) Tr(chi_ideal chi_ideal^dag))."""
    a = np.asarray(getattr(chi_exp, "chi", chi_exp), dtype=complex)
    b = np.asarray(getattr(chi_ideal, "chi", chi_ideal), dtype=complex)
    if a.shape != (4, 4) or b.shape != (4, 4):
        raise ValueError("process matrices must be 4x4")
    denom = math.sqrt(np.trace(a @ a.conj().T).real * np.trace(b @ b.conj().T).real)
    if denom == 0.0:
        raise ValueError("zero process matrix")
    return float(abs(np.trace(a @ b)) / denom)


@dataclass(frozen=True)
class ShotRecord:
    """Photon-count histogram of one (preparation, basis) setting; histogram[k] = trials with k counts."""

    prep: str
    basis: str
    trials: int
    histogram: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "prep", _normalise_label(self.prep))
        if self.basis not in BASES:
            raise ValueError(f"basis must be one of {BASES}")
        hist = tuple(int(h) for h in self.histogram)
        if self.trials < 1 or any(h < 0 for h in hist) or sum(hist) != self.trials:
            raise ValueError("histogram must be nonnegative and sum to trials >= 1")
        object.__setattr__(self, "histogram", hist)

    def bright(self, threshold: int = THRESHOLD) -> int:
        return sum(self.histogram[threshold:])

    def to_json(self) -> str:
        return json.dumps({"prep": self.prep, "basis": self.basis, "trials": self.trials,
                           "histogram": list(self.histogram)})

    @classmethod
    def from_json(cls, line: str) -> "ShotRecord":
        d = json.loads(line)
        return cls(d["prep"], d["basis"], int(d["trials"]), tuple(d["histogram"]))


def write_records(records: Iterable[ShotRecord], path) -> None:
    Path(path).write_text("".join(r.to_json() + "\n" for r in records))


def read_records(path) -> list[ShotRecord]:
    return [ShotRecord.from_json(line) for line in Path(path).read_text().splitlines() if line.strip()]


def bright_probability(rho, basis: str) -> float:
    e = _BRIGHT_STATE[basis]
    return float(np.clip(np.real(e.conj() @ rho @ e), 0.0, 1.0))


def simulate_shots(channel: Callable[[np.ndarray], np.ndarray], prep: str, basis: str,
                   trials: int = DEFAULT_TRIALS, bright_mean: float = BRIGHT_MEAN,
                   dark_mean: float = DARK_MEAN, seed=None) -> ShotRecord:
    """Born-rule outcome per trial, then a Poisson photon count for that outcome."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if not (bright_mean > 0 and dark_mean > 0):
        raise ValueError("count means must be positive")
    if basis not in BASES:
        raise ValueError(f"basis must be one of {BASES}")
    rng = np.random.default_rng(seed)
    p = bright_probability(channel(prep_density(prep)), basis)
    is_bright = rng.random(trials) < p
    counts = rng.poisson(np.where(is_bright, bright_mean, dark_mean))
    return ShotRecord(prep, basis, trials, tuple(np.bincount(counts)))


def detection_error(bright_mean: float = BRIGHT_MEAN, dark_mean: float = DARK_MEAN,
                    threshold: int = THRESHOLD) -> float:
    """Worse of P(bright read as dark) and P(dark read as bright)."""
    from scipy.stats import poisson
    return float(max(poisson.cdf(threshold - 1, bright_mean), poisson.sf(threshold - 1, dark_mean)))


# --- maximum likelihood on Bloch vectors --------------------------------------------

def _loglik(s, bright, trials):
    p = np.clip(0.5 * (1.0 + s), 0.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        up = np.where(bright > 0, bright * np.log(p), 0.0)
        down = np.where(trials - bright > 0, (trials - bright) * np.log(1.0 - p), 0.0)
    return np.sum(up + down, axis=-1)


def _r_coefficients(s, bright, trials):
    """R = a I + c.sigma for the likelihood-gradient operator at Bloch vector s."""
    total = np.sum(trials, axis=-1, keepdims=True)
    p_up = 0.5 * (1.0 + s)
    p_dn = 0.5 * (1.0 - s)
    with np.errstate(divide="ignore", invalid="ignore"):
        w_up = np.where(bright > 0, bright / p_up, 0.0) / total
        w_dn = np.where(trials - bright > 0, (trials - bright) / p_dn, 0.0) / total
    a = 0.5 * np.sum(w_up + w_dn, axis=-1)
    c = 0.5 * (w_up - w_dn)
    return a, c


def _r_rho_r(s, a, c):
    """Bloch vector of R rho R / Tr(R rho R) with R = a I + c.sigma."""
    cs = np.sum(c * s, axis=-1)
    cc = np.sum(c * c, axis=-1)
    num = (2.0 * a)[..., None] * c + (2.0 * cs)[..., None] * c + (a * a - cc)[..., None] * s
    den = a * a + 2.0 * a * cs + cc
    return num / den[..., None]


def mle_bloch(bright, trials, tol: float = MLE_TOL, max_iter: int = MLE_MAX_ITER) -> np.ndarray:
    """ML Bloch vectors for a batch of (x, y, z) bright counts, shape (..., 3).

    Starts from the linear-inversion estimate (pulled just inside the sphere
    when it lies outside) and iterates rho -> R rho R / Tr(R rho R), with the
    step diluted whenever the likelihood would drop. Stops once the
    log-likelihood gains less than tol.
    """
    bright = np.asarray(bright, dtype=float)
    trials = np.broadcast_to(np.asarray(trials, dtype=float), bright.shape)
    if np.any(trials <= 0):
        raise ValueError("every basis needs at least one trial")
    shape = bright.shape
    b = bright.reshape(-1, 3)
    n = trials.reshape(-1, 3)
    s = 2.0 * b / n - 1.0
    norm = np.linalg.norm(s, axis=-1)
    outside = norm > 1.0
    s[outside] *= (0.999 / norm[outside])[:, None]
    eps = np.ones(len(s))
    ll = _loglik(s, b, n)
    active = np.ones(len(s), dtype=bool)
    for _ in range(max_iter):
        if not active.any():
            return s.reshape(shape)
        idx = np.nonzero(active)[0]
        a, c = _r_coefficients(s[idx], b[idx], n[idx])
        e = eps[idx]
        # diluted operator (I + e R) / (1 + e); the scale drops out after normalisation
        s_new = _r_rho_r(s[idx], 1.0 + e * a, e[:, None] * c)
        ll_new = _loglik(s_new, b[idx], n[idx])
        gain = ll_new - ll[idx]
        worse = gain < 0
        eps[idx[worse]] *= 0.5
        ok = ~worse
        s[idx[ok]] = s_new[ok]
        ll[idx[ok]] = ll_new[ok]
        done = ok & (gain < tol)
        active[idx[done]] = False
        active[idx[worse & (eps[idx] < 1e-12)]] = False
    raise RuntimeError(f"maximum-likelihood iteration did not converge in {max_iter} steps")


def _counts_by_basis(records: Sequence[ShotRecord], threshold: int):
    bright = np.zeros(3)
    trials = np.zeros(3)
    for r in records:
        k = _AXIS[r.basis]
        bright[k] += r.bright(threshold)
        trials[k] += r.trials
    if np.any(trials == 0):
        raise ValueError("records must cover the Z, X and Y bases")
    return bright, trials


def bloch_to_density(s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    return 0.5 * (np.eye(2) + s[0] * PAULI_BASIS[1] + s[1] * PAULI_BASIS[2] + s[2] * PAULI_BASIS[3])


def mle_state(records: Sequence[ShotRecord], threshold: int = THRESHOLD) -> np.ndarray:
    """Physical 2x2 density matrix maximising the thresholded binomial likelihood."""
    bright, trials = _counts_by_basis(records, threshold)
    return bloch_to_density(mle_bloch(bright, trials))


def mle_state_from_frequencies(freqs: dict) -> np.ndarray:
    """Infinite-shot limit: bright-outcome probabilities per basis, e.g. {"Z": .5, "X": 1, "Y": .5}."""
    f = np.array([freqs["X"], freqs["Y"], freqs["Z"]], dtype=float)
    return bloch_to_density(mle_bloch(f, np.ones(3)))


# --- chi reconstruction -------------------------------------------------------------

def _inversion_matrix(preps: Sequence[str]) -> np.ndarray:
    """Rows: stacked vec(rho_out) entries; columns: chi_mn in row-major order."""
    rows = []
    for label in preps:
        rho = prep_density(label)
        block = np.empty((4, 16), dtype=complex)
        for m, em in enumerate(PAULI_BASIS):
            for k, ek in enumerate(PAULI_BASIS):
                block[:, 4 * m + k] = (em @ rho @ ek.conj().T).reshape(-1)
        rows.append(block)
    return np.vstack(rows)


def _inverse_map(preps: Sequence[str]) -> np.ndarray:
    a = _inversion_matrix(preps)
    if a.shape[0] < 16 or np.linalg.matrix_rank(a, tol=1e-9) < 16:
        raise ValueError(f"preparations {tuple(preps)} are not informationally complete")
    return np.linalg.pinv(a)


def _simplex_projection(v):
    """Euclidean projection of each row of v onto {x >= 0, sum x = 1}."""
    u = np.sort(v, axis=-1)[..., ::-1]
    css = np.cumsum(u, axis=-1) - 1.0
    k = np.arange(1, v.shape[-1] + 1)
    cond = u - css / k > 0
    rho = np.sum(cond, axis=-1)
    theta = np.take_along_axis(css, (rho - 1)[..., None], axis=-1) / rho[..., None]
    return np.maximum(v - theta, 0.0)


def physical_projection(chi) -> np.ndarray:
    """Closest PSD, trace-1 matrix in Frobenius norm (works on batches).

    The eigenvalues are clipped at a common shift chosen so they sum to one,
    which is the exact Frobenius projection.
    """
    chi = np.asarray(chi, dtype=complex)
    herm = 0.5 * (chi + np.swapaxes(chi.conj(), -1, -2))
    lam, vec = np.linalg.eigh(herm)
    lam = _simplex_projection(lam)
    return (vec * lam[..., None, :]) @ np.swapaxes(vec.conj(), -1, -2)


def linear_inversion_chi(input_preps: Sequence[str], output_states) -> np.ndarray:
    outs = np.asarray(output_states, dtype=complex)
    if outs.shape[-3:] != (len(input_preps), 2, 2):
        raise ValueError("need one 2x2 output state per preparation")
    inv = _inverse_map(input_preps)
    y = outs.reshape(outs.shape[:-3] + (4 * len(input_preps),))
    return (y @ inv.T).reshape(outs.shape[:-3] + (4, 4))


def reconstruct_chi(input_preps: Sequence[str], output_states, subspace: str = "") -> ProcessMatrix:
    """Linear inversion over the preparations, then the physical projection."""
    preps = [_normalise_label(p) for p in input_preps]
    chi = physical_projection(linear_inversion_chi(preps, output_states))
    return ProcessMatrix(chi, subspace)


# --- bootstrap ---------------------------------------------------------------------

@dataclass(frozen=True)
class FidelityReport:
    value: float
    ci_low: float
    ci_high: float
    method: str

    def __post_init__(self):
        if not self.ci_low <= self.value <= self.ci_high:
            raise ValueError("confidence interval must contain the point estimate")

    @property
    def half_width(self) -> float:
        return 0.5 * (self.ci_high - self.ci_low)

    def to_dict(self) -> dict:
        return {"value": self.value, "ci_low": self.ci_low, "ci_high": self.ci_high,
                "method": self.method}


class ProcessFidelityStatistic:
    """Records -> MLE states -> chi -> fidelity against a fixed ideal chi.

    Callable on a record list; `batch` evaluates many resampled count tables
    at once for the bootstrap.
    """

    def __init__(self, chi_ideal, preps: Sequence[str] = STANDARD_PREPS, threshold: int = THRESHOLD):
        self.chi_ideal = np.asarray(getattr(chi_ideal, "chi", chi_ideal), dtype=complex)
        self.preps = tuple(_normalise_label(p) for p in preps)
        self.threshold = threshold
        self._inv = _inverse_map(self.preps)

    def settings(self):
        return [(p, b) for p in self.preps for b in BASES]

    def counts(self, records: Sequence[ShotRecord]):
        """(bright, trials) arrays of shape (n_preps, 3) in x, y, z order."""
        bright = np.zeros((len(self.preps), 3))
        trials = np.zeros((len(self.preps), 3))
        for r in records:
            if r.prep not in self.preps:
                continue
            i = self.preps.index(r.prep)
            k = _AXIS[r.basis]
            bright[i, k] += r.bright(self.threshold)
            trials[i, k] += r.trials
        if np.any(trials == 0):
            raise ValueError("records do not cover every preparation and basis")
        return bright, trials

    def chi(self, records: Sequence[ShotRecord]) -> np.ndarray:
        bright, trials = self.counts(records)
        return self._chi_batch(bright[None], trials)[0]

    def _chi_batch(self, bright, trials):
        s = mle_bloch(bright, trials)
        rho = 0.5 * (np.eye(2) + np.einsum("...k,kij->...ij", s, np.stack(PAULI_BASIS[1:])))
        y = rho.reshape(rho.shape[:-3] + (4 * len(self.preps),))
        chi = (y @ self._inv.T).reshape(rho.shape[:-3] + (4, 4))
        return physical_projection(chi)

    def batch(self, bright, trials) -> np.ndarray:
        chi = self._chi_batch(bright, trials)
        num = np.abs(np.einsum("...ij,ji->...", chi, self.chi_ideal))
        den = np.sqrt(np.einsum("...ij,...ij->...", chi, chi.conj()).real
                      * np.trace(self.chi_ideal @ self.chi_ideal.conj().T).real)
        return num / den

    def __call__(self, records: Sequence[ShotRecord]) -> float:
        bright, trials = self.counts(records)
        return float(self.batch(bright[None], trials)[0])


def _resample_histograms(records, resamples, rng):
    out = []
    for r in records:
        p = np.asarray(r.histogram, dtype=float) / r.trials
        out.append(rng.multinomial(r.trials, p, size=resamples))
    return out


def bootstrap_ci(records: Sequence[ShotRecord], statistic, resamples: int = 1000, seed=0,
                 level: float = 0.95, method: str = "percentile") -> FidelityReport:
    """Bootstrap interval for statistic(records), resampling each setting's trials with replacement.

    method "percentile" uses the quantiles of the resampled statistic;
    "basic" reflects them about the point estimate (2 v - q_hi, 2 v - q_lo),
    which corrects the bias of a statistic pinned against 1. Both are
    widened if needed so they contain the point estimate, and clipped to [0, 1].
    """
    if resamples < 100:
        raise ValueError("need at least 100 resamples")
    if method not in ("percentile", "basic"):
        raise ValueError("method must be 'percentile' or 'basic'")
    records = list(records)
    value = float(statistic(records))
    rng = np.random.default_rng(seed)
    hists = _resample_histograms(records, resamples, rng)
    if hasattr(statistic, "batch"):
        thr = statistic.threshold
        n_p = len(statistic.preps)
        bright = np.zeros((resamples, n_p, 3))
        trials = np.zeros((n_p, 3))
        for r, h in zip(records, hists):
            if r.prep not in statistic.preps:
                continue
            i = statistic.preps.index(r.prep)
            k = _AXIS[r.basis]
            bright[:, i, k] += h[:, thr:].sum(axis=1)
            trials[i, k] += r.trials
        stats = statistic.batch(bright, trials)
    else:
        stats = np.empty(resamples)
        for j in range(resamples):
            resampled = [ShotRecord(r.prep, r.basis, r.trials, tuple(h[j])) for r, h in zip(records, hists)]
            stats[j] = statistic(resampled)
    alpha = 0.5 * (1.0 - level)
    q_lo, q_hi = np.quantile(stats, [alpha, 1.0 - alpha])
    if method == "basic":
        lo, hi = 2.0 * value - q_hi, 2.0 * value - q_lo
    else:
        lo, hi = q_lo, q_hi
    lo = float(np.clip(min(lo, value), 0.0, 1.0))
    hi = float(np.clip(max(hi, value), 0.0, 1.0))
    return FidelityReport(value, lo, hi, f"bootstrap-{method}-{int(round(100 * level))}")


class TomographyResult(NamedTuple):
    chi: ProcessMatrix
    report: FidelityReport
    records: list


def run_process_tomography(channel, ideal_u, trials: int = DEFAULT_TRIALS, seed=0,
                           resamples: int = 1000, bright_mean: float = BRIGHT_MEAN,
                           dark_mean: float = DARK_MEAN, threshold: int = THRESHOLD,
                           method: str = "percentile", subspace: str = "") -> TomographyResult:
    """Simulate every (prep, basis) setting, reconstruct chi and bootstrap the fidelity.

    One SeedSequence is spawned into a stream per setting plus one for the
    bootstrap, so results depend only on the seed.
    """
    stat = ProcessFidelityStatistic(chi_of_unitary(ideal_u))
    settings = stat.settings()
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    children = root.spawn(len(settings) + 1)
    records = [simulate_shots(channel, p, b, trials, bright_mean, dark_mean, np.random.default_rng(ss))
               for (p, b), ss in zip(settings, children)]
    chi = ProcessMatrix(stat.chi(records), subspace)
    report = bootstrap_ci(records, stat, resamples, np.random.default_rng(children[-1]), method=method)
    return TomographyResult(chi, report, records)


# --- reference data ---------------------------------------------------------------

REFERENCE_CHI = ("detuned_id", "resonant_id", "detuned_s", "resonant_s",
                 "detuned_t", "resonant_t", "detuned_h", "resonant_h")


def parse_chi_text(text: str) -> np.ndarray:
    """Parse '# Re' / '# Im' blocks of four whitespace-separated rows each."""
    parts: dict[str, list] = {}
    current = None
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            current = line.lstrip("#").strip().lower()
            parts[current] = []
        elif current is not None:
            parts[current].append([float(x) for x in line.split()])
    re_, im_ = np.array(parts["re"]), np.array(parts["im"])
    if re_.shape != (4, 4) or im_.shape != (4, 4):
        raise ValueError("expected two 4x4 blocks")
    return re_ + 1j * im_


def load_reference_chi(name: str) -> np.ndarray:
    """Measured chi as printed (not necessarily Hermitian or normalised)."""
    if name not in REFERENCE_CHI:
        raise ValueError(f"unknown fixture {name!r}; choose from {REFERENCE_CHI}")
    text = resources.files("crowdctl").joinpath(f"data/chi/{name}.txt").read_text()
    return parse_chi_text(text)
