import numpy as np

from thermosched.kernels import RateKernel
from thermosched.sampler import reverse_rates


def rk4_transition(kernel: RateKernel, sigma_bar: float, steps: int = 2000) -> np.ndarray:
    """Integrate dP/ds = P Q from P(0) = I up to s = sigma_bar with classical RK4."""
    q = np.asarray(kernel.rate_matrix)
    p = np.eye(q.shape[0])
    h = sigma_bar / steps
    for _ in range(steps):
        k1 = p @ q
        k2 = (p + 0.5 * h * k1) @ q
        k3 = (p + 0.5 * h * k2) @ q
        k4 = (p + h * k3) @ q
        p = p + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return p


def brute_force_h_na(kernel: RateKernel, p: np.ndarray, sigma: float = 1.0) -> float:
    """Double loop over (x, y) of p(x) Qrev(x, y) times the kernel's force of ln p(y)/p(x)."""
    q = np.asarray(kernel.rate_matrix)
    total = 0.0
    for x in range(len(p)):
        for y in range(len(p)):
            if x == y or q[y, x] == 0:
                continue
            rate = p[y] / p[x] * sigma * q[y, x]
            total += p[x] * rate * float(kernel.entropy_force(np.log(p[y] / p[x])))
    return total


def brute_force_h_tot(kernel: RateKernel, p: np.ndarray, sigma: float = 1.0) -> float:
    """Double loop of J(x, y) ln[J(x, y) / J(y, x)] over pairs with flux both ways."""
    q = np.asarray(kernel.rate_matrix)
    total = 0.0
    for x in range(len(p)):
        for y in range(len(p)):
            if x == y:
                continue
            forward = p[y] * sigma * q[y, x]
            backward = p[x] * sigma * q[x, y]
            if forward > 0:
                total += forward * np.log(forward / backward)
    return total


def random_distribution(rng: np.random.Generator, n: int, floor: float = 1e-3) -> np.ndarray:
    """Dirichlet draw with every entry at least about `floor`."""
    p = rng.dirichlet(np.ones(n)) + floor
    return p / p.sum()


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def tau_leap_law(schedule, score, kernel, noise) -> np.ndarray:
    """Exact output distribution of the single-token tau-leaping sampler, final forcing included.
    Each step is a Markov matrix built from the sampler's own reverse rates."""
    m = kernel.num_states
    states = np.arange(m).reshape(-1, 1)
    dist = kernel.stationary().copy()
    times = schedule.array
    for k in range(schedule.K, 0, -1):
        t_from, t_to = float(times[k]), float(times[k - 1])
        rates = reverse_rates(score, kernel, noise, states, t_from)[:, 0, :]
        dt = (noise.sigma_bar(t_from) - noise.sigma_bar(t_to)) / noise.sigma(t_from)
        total = rates.sum(axis=1)
        p_jump = -np.expm1(-total * dt)
        denom = total[:, None]
        probs = np.divide(rates, denom, out=np.zeros_like(rates), where=denom > 0)
        step = np.diag(1.0 - p_jump) + p_jump[:, None] * probs
        dist = dist @ step
    if kernel.mask_index is not None:
        rates = reverse_rates(score, kernel, noise, states, float(times[0]))[kernel.mask_index, 0]
        best = int(np.argmax(rates[: kernel.mask_index]))
        dist[best] += dist[kernel.mask_index]
        dist[kernel.mask_index] = 0.0
    return dist
