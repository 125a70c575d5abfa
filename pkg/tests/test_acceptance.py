"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the summary lines
interleaved with the test names (they are printed even without ``-s``).
"""

import re
import time

import numpy as np
import pytest

from blockfilter import cli, problems
from blockfilter.errors import BlockFilterError, ZeroFilterDirection
from blockfilter.factor import (
    apply_preconditioner,
    assemble_preconditioner_dense,
    blockwise_deviation,
    build_filter_factorization,
    exact_block_ldu,
)
from blockfilter.fbar import fbar_deflation, fbar_diagonal_nearest, fbar_symmetrize
from blockfilter.krylov import SolverParams, block_jacobi_preconditioner, gmres
from blockfilter.partition import (
    even_sizes,
    nested_dissection,
    partition_from_sizes,
    validate_partition,
)
from blockfilter.sparse import block_extract, inf_norm, permute_symmetric

FILTER_BOUND = 1e-10
GRID_STRATEGIES = ("diagonal_nearest", "symmetric_nearest")
GRID_FILTERS = ("ones", "random_nonzero", "random_with_zeros")


@pytest.fixture
def announce(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {number}: {'PASS' if ok else 'FAIL'} - {detail}")

    return emit


def grid_matrices():
    return {
        "poisson2d_16x16": problems.poisson2d(16, 16),
        "poisson3d_8x8x8": problems.poisson3d(8, 8, 8),
        "random_dd_200": problems.random_dd(200, seed=0),
    }


def grid_partitions(A):
    n = A.shape[0]
    parts = {f"nd{levels}": nested_dissection(A, levels) for levels in (1, 2, 3)}
    # eight equal contiguous blocks: [25 x 8] for n = 200
    parts["flat8"] = partition_from_sizes(even_sizes(n, 8))
    parts["scalar"] = partition_from_sizes([1] * n)
    return parts


def run_filtering_grid(variant):
    failures = []
    worst = 0.0
    cases = 0
    for mname, A in grid_matrices().items():
        n = A.shape[0]
        for pname, part in grid_partitions(A).items():
            Ap = permute_symmetric(A, part.permutation)
            anorm = inf_norm(Ap)
            for tkind in GRID_FILTERS:
                t = part.permute_vector(problems.filtering_vector(tkind, n, seed=1))
                bound = FILTER_BOUND * anorm * inf_norm(t)
                for strategy in GRID_STRATEGIES:
                    cases += 1
                    case = (mname, pname, tkind, strategy)
                    try:
                        F = build_filter_factorization(Ap, part, t, variant, strategy)
                    except BlockFilterError as exc:
                        failures.append((case, f"build failed: {type(exc).__name__}: {exc}"))
                        continue
                    res = inf_norm(F.matvec(t) - Ap @ t)
                    worst = max(worst, res / (anorm * inf_norm(t)))
                    if not res <= bound:
                        failures.append((case, f"||Mt-At|| = {res:.3e} > {bound:.3e}"))
    return cases, failures, worst


def _describe(failures, limit=8):
    lines = [f"    {'/'.join(c)}: {msg}" for c, msg in failures[:limit]]
    if len(failures) > limit:
        lines.append(f"    ... {len(failures) - limit} more")
    return "\n".join(lines)


def test_criterion_1_direct_filtering_identity(announce):
    start = time.perf_counter()
    cases, failures, worst = run_filtering_grid("direct")
    elapsed = time.perf_counter() - start
    ok = not failures and elapsed <= 60.0
    announce(1, ok, f"{cases - len(failures)}/{cases} direct cases within bound, worst rel {worst:.2e}, {elapsed:.1f}s")
    assert not failures, "\n" + _describe(failures)
    assert elapsed <= 60.0


def test_criterion_2_composite_filtering_identity(announce):
    cases, failures, worst = run_filtering_grid("composite")
    announce(2, not failures, f"{cases - len(failures)}/{cases} composite cases within bound, worst rel {worst:.2e}")
    assert not failures, "\n" + _describe(failures)


def reconstruction_matrices():
    return {
        "poisson2d_16x16": problems.poisson2d(16, 16),
        "random_dd_200": problems.random_dd(200, seed=0),
        "random_spd_300": problems.random_spd(300, seed=1),
        "aniso2d_16x16": problems.aniso2d(16, 16, 0.01),
        "convdiff2d_20x20": problems.convdiff2d(20, 20, 5.0),
        "poisson3d_7x7x7": problems.poisson3d(7, 7, 7),
    }


def test_criterion_3_exact_ldu_reconstruction(announce):
    worst = 0.0
    failures = []
    count = 0
    for mname, A in reconstruction_matrices().items():
        assert A.shape[0] <= 500
        n = A.shape[0]
        parts = {f"nd{levels}": nested_dissection(A, levels) for levels in (1, 2, 3)}
        parts["flat8"] = partition_from_sizes(even_sizes(n, 8))
        parts["scalar"] = partition_from_sizes([1] * n)
        for pname, part in parts.items():
            count += 1
            Ap = permute_symmetric(A, part.permutation)
            F = exact_block_ldu(Ap, part)
            err = np.abs(assemble_preconditioner_dense(F) - Ap.toarray()).max() / inf_norm(Ap)
            worst = max(worst, err)
            if not err <= 1e-10:
                failures.append(((mname, pname), f"reconstruction {err:.3e}"))
    announce(3, not failures, f"{count - len(failures)}/{count} reconstructions, worst rel {worst:.2e}")
    assert not failures, "\n" + _describe(failures)


def test_criterion_4_scalar_block_exactness(announce):
    n = 200
    part = partition_from_sizes([1] * n)
    devs = []
    for seed in range(20):
        A = problems.random_dd(n, seed=seed)
        t = problems.filtering_vector("random_nonzero", n, seed=seed)
        assert np.all(t != 0)
        F = build_filter_factorization(A, part, t, "direct")
        E = exact_block_ldu(A, part)
        devs.append(blockwise_deviation(F, E))
    devs = np.array(devs)
    bad = np.flatnonzero(~(devs <= 1e-12))
    announce(4, bad.size == 0, f"{20 - bad.size}/20 instances within 1e-12, max blockwise deviation {devs.max():.2e}")
    assert bad.size == 0, f"seeds {bad.tolist()} deviate by {devs[bad].tolist()}"


def _random_spd(b, r):
    B = r.standard_normal((b, b))
    return B @ B.T + b * np.eye(b)


def _zero_pattern(b, r, case):
    if case == 0:
        return np.zeros(b, dtype=bool)
    if case == 1:
        keep = np.zeros(b, dtype=bool)
        keep[r.integers(b)] = True
        return keep
    if case == 2:
        return np.arange(b) % 2 == 0
    if case == 3:
        return np.arange(b) >= b // 2
    if case == 4:
        return np.ones(b, dtype=bool)
    return r.random(b) >= r.uniform(0.0, 0.9)


def test_criterion_5_fbar_contract(announce):
    r = np.random.default_rng(2024)
    worst = 0.0
    failures = 0
    for trial in range(1000):
        b = int(r.integers(1, 33))
        D = _random_spd(b, r)
        keep = _zero_pattern(b, r, trial % 8)
        v = r.standard_normal(b) * 10.0 ** r.uniform(-4, 4, b)
        v[~keep] = 0.0
        u = np.linalg.solve(D, v)
        approximations = [fbar_diagonal_nearest(u, v), fbar_symmetrize(u, v)]
        if keep.any():
            # an unrelated u is also admissible for the nearest-column constructions
            w = r.standard_normal(b)
            approximations += [fbar_diagonal_nearest(w, v), fbar_symmetrize(w, v)]
        try:
            approximations.append(fbar_deflation(D, v))
        except ZeroFilterDirection:
            # the factorization then uses F = 0, exact because u = D^-1 0 = 0
            assert not np.any(u)
        for F in approximations:
            res = np.abs(F.apply(F.v) - F.u).max()
            rel = res / max(np.abs(F.u).max(), 1.0)
            worst = max(worst, rel)
            failures += not rel <= 1e-12

    defl_worst = 0.0
    defl_fail = 0
    for trial in range(100):
        b = int(r.integers(1, 33))
        D = _random_spd(b, r)
        Z = r.standard_normal(b)
        F = fbar_deflation(D, Z)
        err = np.abs(F.apply(Z) - np.linalg.solve(D, Z)).max()
        defl_worst = max(defl_worst, err)
        defl_fail += not err <= 1e-12

    ok = failures == 0 and defl_fail == 0
    announce(5, ok, f"contract worst {worst:.2e} ({failures} violations), deflation worst {defl_worst:.2e} ({defl_fail} violations)")
    assert failures == 0 and defl_fail == 0


def test_criterion_6_partition_validity(announce):
    mats = dict(reconstruction_matrices())
    mats.update(grid_matrices())
    violations = 0
    checked = 0
    for A in mats.values():
        for levels in range(5):
            checked += 1
            violations += len(validate_partition(A, nested_dissection(A, levels)).violations)

    A = problems.poisson2d(4, 4)
    part = nested_dissection(A, 2)
    Ap = permute_symmetric(A, part.permutation)
    zero = {(1, 2), (1, 4), (1, 5), (1, 6), (2, 4), (2, 5), (2, 6), (3, 4), (3, 5), (3, 6), (4, 5)}
    zero |= {(j, i) for i, j in zero}
    observed = {
        (i + 1, j + 1)
        for i in range(part.num_blocks)
        for j in range(part.num_blocks)
        if block_extract(Ap, part, i, j).nnz == 0
    }
    pattern_ok = part.num_blocks == 7 and observed == zero
    ok = violations == 0 and pattern_ok
    announce(6, ok, f"{checked} dissections with {violations} violations; 4x4 grid 7-block zero pattern {'matches' if pattern_ok else 'differs'}")
    assert violations == 0
    assert pattern_ok, sorted(observed ^ zero)


def test_criterion_7_application_oracle(announce):
    r = np.random.default_rng(77)
    instances = {
        "poisson2d_16x16": (problems.poisson2d(16, 16), 3),
        "random_dd_200": (problems.random_dd(200, seed=3), 2),
        "random_spd_300": (problems.random_spd(300, seed=2), 3),
        "convdiff2d_15x15": (problems.convdiff2d(15, 15, 4.0), 2),
        "poisson3d_6x6x6": (problems.poisson3d(6, 6, 6), 2),
    }
    worst = 0.0
    failures = []
    for name, (A, levels) in instances.items():
        n = A.shape[0]
        assert n <= 300
        part = nested_dissection(A, levels)
        Ap = permute_symmetric(A, part.permutation)
        t = part.permute_vector(problems.filtering_vector("random_with_zeros", n, seed=5))
        builds = {
            "exact": exact_block_ldu(Ap, part),
            "direct": build_filter_factorization(Ap, part, t, "direct"),
            "composite": build_filter_factorization(Ap, part, t, "composite", "symmetric_nearest"),
        }
        for variant, F in builds.items():
            M = assemble_preconditioner_dense(F)
            for _ in range(10):
                rhs = r.standard_normal(n)
                ref = np.linalg.solve(M, rhs)
                err = np.linalg.norm(apply_preconditioner(F, rhs) - ref) / np.linalg.norm(ref)
                worst = max(worst, err)
                if not err <= 1e-9:
                    failures.append(((name, variant), f"relative error {err:.3e}"))
    announce(7, not failures, f"{15 * 10 - len(failures)}/150 solves within 1e-9, worst {worst:.2e}")
    assert not failures, "\n" + _describe(failures)


def test_criterion_8_solver_sanity(announce):
    exact_ok = True
    details = []
    for seed in range(10):
        A = problems.random_dd(120, seed=seed)
        part = nested_dissection(A, 2)
        Ap = permute_symmetric(A, part.permutation)
        F = exact_block_ldu(Ap, part)
        b = np.random.default_rng(seed).standard_normal(120)
        rep = gmres(Ap, b, F.solve, SolverParams(relative_tolerance=1e-10))
        true_res = np.linalg.norm(b - Ap @ rep.solution) / np.linalg.norm(b)
        if rep.iterations != 1 or not true_res <= 1e-10:
            exact_ok = False
            details.append(f"seed {seed}: {rep.iterations} iterations, residual {true_res:.2e}")

    A = problems.poisson2d(32, 32)
    part = nested_dissection(A, 3)
    Ap = permute_symmetric(A, part.permutation)
    b = np.random.default_rng(0).standard_normal(A.shape[0])
    params = SolverParams(max_iterations=5000, relative_tolerance=1e-8)
    F = build_filter_factorization(Ap, part, np.ones(A.shape[0]), "direct")
    it_filter = gmres(Ap, b, F.solve, params)
    it_none = gmres(Ap, b, None, params)
    it_bj = gmres(Ap, b, block_jacobi_preconditioner(Ap, part), params)
    compare_ok = (
        it_filter.converged
        and it_filter.iterations < it_none.iterations
        and it_filter.iterations <= it_bj.iterations
    )
    ok = exact_ok and compare_ok
    announce(
        8,
        ok,
        f"exact variant 1 iteration on 10/10 instances: {exact_ok}; poisson 32x32 iterations "
        f"filter={it_filter.iterations} none={it_none.iterations} block-jacobi={it_bj.iterations}",
    )
    assert exact_ok, details
    assert compare_ok


def test_criterion_9_determinism(announce, tmp_path):
    strip = re.compile(r'^\s*"wall_time": .*$', re.M)
    configs = [
        cli.RunConfig(problem="poisson2d", dims=[16, 16], levels=3, solver="gmres", per_block=True),
        cli.RunConfig(problem="random_dd", n=150, levels=2, filter="random_with_zeros", variant="composite",
                      strategy="symmetric_nearest", solver="gmres"),
        cli.RunConfig(problem="random_spd", n=120, levels=2, solver="cg", filter="random_nonzero"),
    ]
    identical = 0
    for i, cfg in enumerate(configs):
        cfg.output = str(tmp_path / f"report{i}.json")
        texts = []
        for _ in range(2):
            assert cli.run(cfg) == cli.EXIT_OK
            texts.append(strip.sub("", (tmp_path / f"report{i}.json").read_text()))
        identical += texts[0] == texts[1]
    ok = identical == len(configs)
    announce(9, ok, f"{identical}/{len(configs)} configurations produced byte-identical reports modulo wall_time")
    assert ok
