"""Independent reference implementations the tests check against.

Deliberately naive and separate from the package code paths they verify:
plain recursion over dispatch decisions with explicit undo (no environment
object), a triple-loop matrix multiply, and a central-difference gradient.
"""

import numpy as np


def _walk_sequences(inst, visit):
    """Recurse over every (machine, job) dispatch sequence.

    visit(makespan) is called at each complete schedule.  State is three
    plain lists with undo on backtrack.
    """
    frontier = [0] * inst.num_jobs
    mach_free = [0] * inst.num_machines
    job_ready = [0] * inst.num_jobs
    remaining = inst.num_operations

    def walk(makespan):
        nonlocal remaining
        if remaining == 0:
            visit(makespan)
            return
        for j in range(inst.num_jobs):
            k = frontier[j]
            if k >= len(inst.jobs[j]):
                continue
            for m, p in inst.jobs[j].operations[k].options:
                start = max(mach_free[m], job_ready[j])
                end = start + p
                saved = (mach_free[m], job_ready[j])
                mach_free[m] = end
                job_ready[j] = end
                frontier[j] += 1
                remaining -= 1
                walk(max(makespan, end))
                mach_free[m], job_ready[j] = saved
                frontier[j] -= 1
                remaining += 1

    walk(0)


def enumerate_makespans(inst) -> set[int]:
    """Makespans of every reachable dispatch sequence."""
    out = set()
    _walk_sequences(inst, out.add)
    return out


def enumerate_optimum(inst) -> int:
    return min(enumerate_makespans(inst))


def count_leaves(inst) -> int:
    count = [0]

    def bump(_):
        count[0] += 1

    _walk_sequences(inst, bump)
    return count[0]


def uniform_policy_makespan_distribution(inst) -> dict[int, float]:
    """Exact makespan probabilities when every legal action is equally likely."""
    dist: dict[int, float] = {}
    frontier = [0] * inst.num_jobs
    mach_free = [0] * inst.num_machines
    job_ready = [0] * inst.num_jobs

    def actions():
        out = []
        for j in range(inst.num_jobs):
            k = frontier[j]
            if k < len(inst.jobs[j]):
                for m, p in inst.jobs[j].operations[k].options:
                    out.append((j, m, p))
        return out

    def walk(makespan, prob):
        acts = actions()
        if not acts:
            dist[makespan] = dist.get(makespan, 0.0) + prob
            return
        for j, m, p in acts:
            end = max(mach_free[m], job_ready[j]) + p
            saved = (mach_free[m], job_ready[j])
            mach_free[m] = end
            job_ready[j] = end
            frontier[j] += 1
            walk(max(makespan, end), prob / len(acts))
            mach_free[m], job_ready[j] = saved
            frontier[j] -= 1

    walk(0, 1.0)
    return dist


def naive_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    n, k = a.shape
    k2, m = b.shape
    assert k == k2
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            for t in range(k):
                out[i, j] += a[i, t] * b[t, j]
    return out


def central_difference(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Gradient of scalar f at x, one coordinate at a time."""
    g = np.zeros_like(x, dtype=float)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f()
        flat[i] = orig - h
        down = f()
        flat[i] = orig
        gf[i] = (up - down) / (2.0 * h)
    return g
