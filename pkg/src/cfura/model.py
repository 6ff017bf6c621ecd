"""Network geometry, priors, and random generation of one access slot.

The observation model is Y = sum_u S_u X_u + W where the codebooks S_u have
i.i.d. CN(0, 1/L) entries, the rows of X_u are Bernoulli(lambda_u) times
CN(0, Sigma_u) channel vectors, and W is white noise with per-entry variance
sigma_w^2 = 1/(L * snr).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rng import complex_normal

SQRT3 = np.sqrt(3.0)


@dataclass
class SystemConfig:
    """Scalar parameters of one simulated access slot."""

    L: int                      # codeword block length (symbols)
    U: int                      # number of locations
    B: int                      # number of radio units
    M: int                      # antennas per RU
    alpha: np.ndarray           # alpha_u = N_u / L, length U
    lam: np.ndarray             # activity probability per location, length U
    snr: float                  # linear uplink SNR
    T: int = 16                 # AMP iterations
    seed: int = 0
    mc_se: int = 100_000        # state-evolution Monte Carlo sample count
    mc_cond: int = 100_000      # conditional-moment Monte Carlo sample count

    def __post_init__(self):
        self.alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        self.lam = np.atleast_1d(np.asarray(self.lam, dtype=float))
        if self.alpha.shape != (self.U,) or self.lam.shape != (self.U,):
            raise ValueError("alpha and lam must have length U")
        if np.any(self.alpha <= 0):
            raise ValueError("alpha entries must be positive")
        if np.any(self.lam < 0) or np.any(self.lam > 1):
            raise ValueError("lam entries must lie in [0, 1]")
        if self.L < 1 or self.U < 1 or self.B < 1 or self.M < 1 or self.T < 1:
            raise ValueError("L, U, B, M, T must be positive integers")
        if self.snr <= 0:
            raise ValueError("snr must be positive")
        if np.any(self.n_codewords < 1):
            raise ValueError("round(alpha_u * L) must be >= 1 for every location")

    @property
    def n_codewords(self):
        """N_u = round(alpha_u * L), at least 1."""
        return np.rint(self.alpha * self.L).astype(int)

    @property
    def F(self):
        return self.B * self.M

    @property
    def sigma_w2(self):
        return 1.0 / (self.L * self.snr)


@dataclass
class LSFCProfile:
    """Nominal large-scale fading coefficients g[u, b] plus layout metadata."""

    g: np.ndarray                                  # U x B, non-negative
    location_xy: np.ndarray | None = None          # U x 2 (meters)
    ru_xy: np.ndarray | None = None                # B x 2 (meters)
    periods: np.ndarray | None = None              # 2 x 2 torus lattice vectors

    def __post_init__(self):
        self.g = np.asarray(self.g, dtype=float)
        if self.g.ndim != 2:
            raise ValueError("g must be a U x B matrix")
        if np.any(self.g < 0):
            raise ValueError("LSFCs must be non-negative")
        if np.any(self.g.max(axis=1) <= 0):
            raise ValueError("every location needs at least one positive LSFC")

    @property
    def U(self):
        return self.g.shape[0]

    @property
    def B(self):
        return self.g.shape[1]

    def sigma(self, u, M):
        """Per-location channel covariance diag(g_u1, ..., g_uB) kron I_M,
        returned as its length-B*M diagonal."""
        return np.repeat(self.g[u], M)


@dataclass
class Scene:
    """One sampled realization of the access slot."""

    codebooks: list            # U matrices, L x N_u
    activity: list             # U binary vectors, length N_u
    channels: list             # U matrices, N_u x F (zero rows where inactive)
    noise: np.ndarray          # L x F
    observation: np.ndarray    # L x F
    config: SystemConfig = field(repr=False, default=None)
    geometry: LSFCProfile = field(repr=False, default=None)


def build_wyner_geometry(crosstalk):
    """Two-location, two-RU linear model with g = [[1, p], [p, 1]]."""
    p = float(crosstalk)
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"crosstalk must lie in [0, 1], got {p}")
    g = np.array([[1.0, p], [p, 1.0]])
    return LSFCProfile(g=g)


def pathloss(d, d0, gamma):
    """Distance-based pathloss 1 / (1 + (d/d0)^gamma)."""
    if d0 <= 0:
        raise ValueError("d0 must be positive")
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise ValueError("distance must be non-negative")
    out = 1.0 / (1.0 + (d / d0) ** gamma)
    return float(out) if out.ndim == 0 else out


def torus_distance(p, q, periods):
    """Minimum Euclidean distance between p and q over the 3x3 block of
    lattice translates (the 8 wrapped copies plus the untranslated one)."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    best = np.inf
    for i in (-1, 0, 1):
        for j in (-1, 0, 1):
            shift = i * periods[0] + j * periods[1]
            best = min(best, float(np.hypot(*(p - (q + shift)))))
    return best


def hex_layout(side):
    """Coordinates of the 16-tile / 12-RU hexagonal patch.

    Sixteen equilateral triangles (side `side`) arranged as a hexagon with
    tile rows of 3, 5, 5, 3, centered on the origin.  RUs sit on the tile
    corners: the patch has 14 drawn corners, of which the two top-row
    corners coincide with the two bottom-row ones under the torus wrap, so
    12 RU positions are kept (the top pair is dropped).  The torus periods
    are the bounding box of the layout; distances wrap around it, which
    emulates a borderless periodic network.
    """
    s = float(side)
    if s <= 0:
        raise ValueError("side must be positive")
    hh = SQRT3 * s / 2.0

    ru = [(1.5 * s, 2 * hh), (2.5 * s, 2 * hh)]                   # top edge
    ru += [(1.0 * s, hh), (2.0 * s, hh), (3.0 * s, hh)]
    ru += [(0.5 * s, 0.0), (1.5 * s, 0.0), (2.5 * s, 0.0), (3.5 * s, 0.0)]
    ru += [(1.0 * s, -hh), (2.0 * s, -hh), (3.0 * s, -hh)]
    ru_xy = np.array(ru)

    loc = []
    # row A (3 tiles, between y = h and 2h)
    loc += [(1.5 * s, 4 * hh / 3), (2.0 * s, 5 * hh / 3), (2.5 * s, 4 * hh / 3)]
    # row B (5 tiles, between y = 0 and h)
    loc += [(1.0 * s, hh / 3), (1.5 * s, 2 * hh / 3), (2.0 * s, hh / 3),
            (2.5 * s, 2 * hh / 3), (3.0 * s, hh / 3)]
    # row C (5 tiles, mirror of row B)
    loc += [(1.0 * s, -hh / 3), (1.5 * s, -2 * hh / 3), (2.0 * s, -hh / 3),
            (2.5 * s, -2 * hh / 3), (3.0 * s, -hh / 3)]
    # row D (3 tiles, mirror of row A)
    loc += [(1.5 * s, -4 * hh / 3), (2.0 * s, -5 * hh / 3), (2.5 * s, -4 * hh / 3)]
    location_xy = np.array(loc)

    periods = np.array([[3.0 * s, 0.0], [0.0, 4.0 * hh]])
    return location_xy, ru_xy, periods


def build_hex_geometry(side=100.0, d0=13.57, gamma=3.67):
    """LSFC profile of the hexagonal 16-location, 12-RU network with
    torus-wrapped distances and the 1/(1+(d/d0)^gamma) pathloss."""
    location_xy, ru_xy, periods = hex_layout(side)
    U, B = len(location_xy), len(ru_xy)
    g = np.empty((U, B))
    for u in range(U):
        for b in range(B):
            g[u, b] = pathloss(torus_distance(location_xy[u], ru_xy[b], periods), d0, gamma)
    return LSFCProfile(g=g, location_xy=location_xy, ru_xy=ru_xy, periods=periods)


def calibrate_snr(snr_rx, geometry):
    """Transmit SNR that yields `snr_rx` at the strongest location-RU link,
    i.e. snr_rx divided by the best pathloss in the profile."""
    if snr_rx <= 0:
        raise ValueError("snr_rx must be positive")
    peak = float(geometry.g.max())
    if peak <= 0:
        raise ValueError("geometry has no positive LSFC")
    return float(snr_rx) / peak


def sample_scene(config, geometry, streams):
    """Draw one Scene: codebooks, activities, channels, noise, observation.

    `streams` maps the names codebook/activity/channel/noise to independent
    Generators (see rng.StreamFactory).  The result is fully determined by
    those streams.
    """
    if geometry.U != config.U or geometry.B != config.B:
        raise ValueError("geometry does not match config dimensions")
    L, F = config.L, config.F
    n_u = config.n_codewords

    codebooks = []
    activity = []
    channels = []
    for u in range(config.U):
        s_u = complex_normal(streams["codebook"], (L, n_u[u]), var=1.0 / L)
        a_u = (streams["activity"].random(n_u[u]) < config.lam[u]).astype(np.int8)
        sig = geometry.sigma(u, config.M)
        h_u = complex_normal(streams["channel"], (n_u[u], F)) * np.sqrt(sig)
        x_u = h_u * a_u[:, None]
        codebooks.append(s_u)
        activity.append(a_u)
        channels.append(x_u)

    w = complex_normal(streams["noise"], (L, F), var=config.sigma_w2)
    y = w.copy()
    for u in range(config.U):
        y += codebooks[u] @ channels[u]
    return Scene(codebooks=codebooks, activity=activity, channels=channels,
                 noise=w, observation=y, config=config, geometry=geometry)


def make_priors(config, geometry):
    """Per-location Bernoulli-Gaussian priors (lambda_u, diag Sigma_u)."""
    from .denoiser import PriorParams
    return [PriorParams(lam=float(config.lam[u]), sigma=geometry.sigma(u, config.M))
            for u in range(config.U)]


def export_geometry(geometry, path):
    """Plain-text table, one row per location: g_{u,1} ... g_{u,B}, full
    double precision."""
    with open(path, "w") as fh:
        for row in geometry.g:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def import_geometry(path):
    g = np.loadtxt(path, ndmin=2)
    return LSFCProfile(g=g)
