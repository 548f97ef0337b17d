"""Channel generation for the RIS-assisted downlink.

Geometry convention: the AP is a half-wavelength ULA along the y-axis; the
RIS is a half-wavelength UPA with shape (n1, n2), n1 the largest divisor of
N not exceeding sqrt(N). All angles are azimuths computed from the 2-D
scenario geometry; elevation is fixed at zero so the vertical UPA factor is
all-ones.

The AP-RIS and RIS-user links are Rician with line-of-sight components
built from steering vectors; the AP-user link is Rayleigh. Path loss enters
as an amplitude factor 10**(-PL_dB/20) multiplying the normalized fading.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .config import SystemConfig


# ---------------------------------------------------------------------------
# path loss and priorities


def ris_path_loss_db(d: np.ndarray | float) -> np.ndarray | float:
    """AP-RIS / RIS-user path loss in dB at distance d meters."""
    return 35.6 + 22.0 * np.log10(d)


def direct_path_loss_db(d: np.ndarray | float) -> np.ndarray | float:
    """AP-user path loss in dB at distance d meters."""
    return 32.6 + 36.7 * np.log10(d)


def amplitude(pl_db: np.ndarray | float) -> np.ndarray | float:
    return 10.0 ** (-np.asarray(pl_db, dtype=float) / 20.0)


def compute_priorities(d_ap_user: np.ndarray) -> np.ndarray:
    """User priorities: inverse linear path loss of the direct link,
    normalized so the priorities sum to K."""
    d = np.asarray(d_ap_user, dtype=float)
    if np.any(d <= 0):
        raise ValueError("degenerate geometry: user at zero distance from AP")
    inv_pl = 10.0 ** (-direct_path_loss_db(d) / 10.0)
    return inv_pl * (d.size / inv_pl.sum())


# ---------------------------------------------------------------------------
# steering vectors


def ula_steering(m: int, azimuth: float) -> np.ndarray:
    """Half-wavelength ULA response along the y-axis."""
    return np.exp(1j * np.pi * np.arange(m) * np.sin(azimuth))


def upa_shape(n: int) -> tuple[int, int]:
    """UPA factorization (n1, n2): n1 the largest divisor of n with n1 <= sqrt(n)."""
    n1 = 1
    for d in range(1, int(math.isqrt(n)) + 1):
        if n % d == 0:
            n1 = d
    return n1, n // n1


def upa_steering(n: int, azimuth: float) -> np.ndarray:
    """RIS UPA response; elevation fixed at zero (vertical factor is ones)."""
    n1, n2 = upa_shape(n)
    horiz = np.exp(1j * np.pi * np.arange(n1) * np.sin(azimuth))
    return np.kron(horiz, np.ones(n2, dtype=complex))


def _azimuth(src: tuple[float, float], dst: tuple[float, float]) -> float:
    return math.atan2(dst[1] - src[1], dst[0] - src[0])


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class LosComponents:
    """One LOS realization: steering-vector products, geometry and path loss."""

    g_los: np.ndarray      # (N, M) unit-modulus entries
    h_r_los: np.ndarray    # (K, N) unit-modulus entries
    l1: float              # AP->RIS amplitude path loss
    l2: np.ndarray         # (K,) RIS->user amplitude path loss
    l_d: np.ndarray        # (K,) AP->user amplitude path loss
    user_pos: np.ndarray   # (K, 2) meters
    d_ap_user: np.ndarray  # (K,)


@dataclass(frozen=True)
class ChannelSet:
    """One full channel realization plus the raw fading pieces it was
    composed from (kept so estimation error can be injected later)."""

    g: np.ndarray          # (N, M)
    h_r: np.ndarray        # (K, N)
    h_d: np.ndarray        # (K, M)
    h_cascade: np.ndarray  # (K, N, M), H_r[k] = diag(h_r[k]) @ G
    alpha: np.ndarray      # (K,) positive priorities
    sigma2: np.ndarray     # (K,) noise variances, watts
    user_pos: np.ndarray   # (K, 2)
    los: LosComponents
    g_nlos: np.ndarray     # (N, M) standard complex Gaussian draw
    h_r_nlos: np.ndarray   # (K, N)
    h_d_fading: np.ndarray  # (K, M) normalized Rayleigh fading of h_d
    kappa: float


@dataclass(frozen=True)
class ChannelEstimate(ChannelSet):
    """Estimated channels; ``varrho`` is the NMSE of channel estimation.

    varrho = 0 reproduces the true ChannelSet exactly.
    """

    varrho: float = 0.0


# ---------------------------------------------------------------------------
# operations


def sample_los(config: SystemConfig, rng: np.random.Generator) -> LosComponents:
    """Draw user positions and build the LOS channel components."""
    k = config.k
    # uniform in the disc around user_center
    r = config.user_radius * np.sqrt(rng.uniform(size=k))
    phi = rng.uniform(0.0, 2.0 * np.pi, size=k)
    user_pos = np.stack(
        [config.user_center[0] + r * np.cos(phi),
         config.user_center[1] + r * np.sin(phi)], axis=1)

    d_ap_ris = math.dist(config.ap_pos, config.ris_pos)
    d_ris_user = np.linalg.norm(user_pos - np.asarray(config.ris_pos), axis=1)
    d_ap_user = np.linalg.norm(user_pos - np.asarray(config.ap_pos), axis=1)
    if d_ap_ris <= 0 or np.any(d_ris_user <= 0) or np.any(d_ap_user <= 0):
        raise ValueError("degenerate geometry: coincident nodes")

    az_ap_to_ris = _azimuth(config.ap_pos, config.ris_pos)
    az_ris_to_ap = _azimuth(config.ris_pos, config.ap_pos)
    a_ris_ap = upa_steering(config.n, az_ris_to_ap)
    a_ap = ula_steering(config.m, az_ap_to_ris)
    g_los = np.outer(a_ris_ap, a_ap.conj())

    h_r_los = np.empty((k, config.n), dtype=complex)
    for i in range(k):
        az = _azimuth(config.ris_pos, tuple(user_pos[i]))
        h_r_los[i] = upa_steering(config.n, az).conj()

    return LosComponents(
        g_los=g_los,
        h_r_los=h_r_los,
        l1=float(amplitude(ris_path_loss_db(d_ap_ris))),
        l2=amplitude(ris_path_loss_db(d_ris_user)),
        l_d=amplitude(direct_path_loss_db(d_ap_user)),
        user_pos=user_pos,
        d_ap_user=d_ap_user,
    )


def _crandn(rng: np.random.Generator, *shape: int) -> np.ndarray:
    """Standard complex Gaussian: unit variance per entry."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def _compose(los: LosComponents, kappa: float, g_nlos, h_r_nlos, h_d_fading,
             sigma2: float) -> dict:
    w_los = np.sqrt(kappa / (kappa + 1.0))
    w_nlos = np.sqrt(1.0 / (kappa + 1.0))
    g = los.l1 * (w_los * los.g_los + w_nlos * g_nlos)
    h_r = los.l2[:, None] * (w_los * los.h_r_los + w_nlos * h_r_nlos)
    h_d = los.l_d[:, None] * h_d_fading
    h_cascade = h_r[:, :, None] * g[None, :, :]
    k = h_r.shape[0]
    return dict(
        g=g, h_r=h_r, h_d=h_d, h_cascade=h_cascade,
        alpha=compute_priorities(los.d_ap_user),
        sigma2=np.full(k, sigma2),
        user_pos=los.user_pos, los=los,
        g_nlos=g_nlos, h_r_nlos=h_r_nlos, h_d_fading=h_d_fading,
        kappa=kappa,
    )


def sample_channels(los: LosComponents, config: SystemConfig,
                    rng: np.random.Generator) -> ChannelSet:
    """Draw the NLOS fading and compose the full Rician/Rayleigh channels."""
    k, m, n = config.k, config.m, config.n
    return ChannelSet(**_compose(
        los, config.kappa,
        g_nlos=_crandn(rng, n, m),
        h_r_nlos=_crandn(rng, k, n),
        h_d_fading=_crandn(rng, k, m),
        sigma2=config.sigma2,
    ))


def corrupt_channels(true_channels: ChannelSet, varrho: float,
                     rng: np.random.Generator) -> ChannelEstimate:
    """Inject estimation error of NMSE ``varrho`` into the random fading
    components; LOS components are assumed perfectly known."""
    if varrho < 0:
        raise ValueError("varrho must be nonnegative")
    cs = true_channels
    w_true = np.sqrt(1.0 / (varrho + 1.0))
    w_err = np.sqrt(varrho / (varrho + 1.0))

    def mix(a):
        if varrho == 0.0:
            return a.copy()
        return w_true * a + w_err * _crandn(rng, *a.shape)

    fields = _compose(
        cs.los, cs.kappa,
        g_nlos=mix(cs.g_nlos),
        h_r_nlos=mix(cs.h_r_nlos),
        h_d_fading=mix(cs.h_d_fading),
        sigma2=float(cs.sigma2[0]),
    )
    return ChannelEstimate(varrho=varrho, **fields)


def combined_channel(channels: ChannelSet, theta: np.ndarray) -> np.ndarray:
    """Effective AP->user channels h_k = h_d_k + theta^H H_r_k, shape (K, M)."""
    if channels.h_cascade.shape[1] == 0:
        return channels.h_d.copy()
    if theta.shape[0] != channels.h_cascade.shape[1]:
        raise ValueError("theta length does not match RIS element count")
    return channels.h_d + np.einsum("n,knm->km", theta.conj(), channels.h_cascade)


# ---------------------------------------------------------------------------
# dataset file (JSON): header {M, K, N, seed, count} + per-sample LOS records


def _c2flat(a: np.ndarray) -> list:
    """Complex array -> flat row-major list of [re, im] pairs."""
    out = np.empty(a.size * 2)
    flat = np.ravel(a)
    out[0::2] = flat.real
    out[1::2] = flat.imag
    return out.tolist()


def _flat2c(vals: list, shape: tuple[int, ...]) -> np.ndarray:
    arr = np.asarray(vals, dtype=float)
    expected = 2 * int(np.prod(shape))
    if arr.size != expected:
        raise ValueError(f"flat complex array has {arr.size} floats, expected {expected}")
    return (arr[0::2] + 1j * arr[1::2]).reshape(shape)


def save_dataset(path: str, config: SystemConfig, samples: list[LosComponents]) -> None:
    doc = {
        "header": {
            "M": config.m, "K": config.k, "N": config.n,
            "seed": config.seed, "count": len(samples),
        },
        "config": config.to_dict(),
        "samples": [
            {
                "g_los": _c2flat(s.g_los),
                "h_r_los": _c2flat(s.h_r_los),
                "l1": s.l1,
                "l2": s.l2.tolist(),
                "l_d": s.l_d.tolist(),
                "user_pos": s.user_pos.tolist(),
                "d_ap_user": s.d_ap_user.tolist(),
            }
            for s in samples
        ],
    }
    with open(path, "w") as f:
        json.dump(doc, f)
        f.write("\n")


def load_dataset(path: str) -> tuple[SystemConfig, list[LosComponents]]:
    """Load a LOS dataset; validates every sample against the header."""
    with open(path) as f:
        doc = json.load(f)
    hdr = doc["header"]
    m, k, n, count = hdr["M"], hdr["K"], hdr["N"], hdr["count"]
    config = SystemConfig.from_dict(doc["config"])
    if (config.m, config.k, config.n) != (m, k, n):
        raise ValueError("dataset header inconsistent with embedded config")
    if len(doc["samples"]) != count:
        raise ValueError(f"dataset holds {len(doc['samples'])} samples, header says {count}")
    samples = []
    for rec in doc["samples"]:
        samples.append(LosComponents(
            g_los=_flat2c(rec["g_los"], (n, m)),
            h_r_los=_flat2c(rec["h_r_los"], (k, n)),
            l1=float(rec["l1"]),
            l2=np.asarray(rec["l2"], dtype=float),
            l_d=np.asarray(rec["l_d"], dtype=float),
            user_pos=np.asarray(rec["user_pos"], dtype=float).reshape(k, 2),
            d_ap_user=np.asarray(rec["d_ap_user"], dtype=float),
        ))
        if samples[-1].l2.size != k or samples[-1].l_d.size != k:
            raise ValueError("per-user path-loss vectors do not match header K")
    return config, samples


def generate_dataset(config: SystemConfig, count: int) -> list[LosComponents]:
    """Generate ``count`` LOS samples deterministically from ``config.seed``."""
    rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    return [sample_los(config, rng) for _ in range(count)]
