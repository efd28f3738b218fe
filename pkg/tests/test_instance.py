import numpy as np
import pytest

from flexsched.instance import (GenParams, Instance, InstanceFormatError, Job,
                                Operation, fig2_instance, generate_instance,
                                parse_instance, write_instance)


def test_parse_minimal():
    inst = parse_instance("1 1\n1 1 1 5\n")
    assert inst.num_jobs == 1 and inst.num_machines == 1
    assert inst.jobs[0].operations[0].options == ((0, 5),)


def test_parse_two_job_example():
    inst = fig2_instance()
    assert inst.num_jobs == 2 and inst.num_machines == 2
    j1, j2 = inst.jobs
    assert [op.options for op in j1.operations] == [((0, 5),), ((1, 3),)]
    assert j2.operations[0].options == ((0, 8), (1, 5))
    assert inst.num_operations == 3
    assert inst.max_time == 8


def test_parse_header_with_flexibility_float():
    inst = parse_instance("1 2 1.5\n1 2 1 4 2 6\n")
    assert inst.num_machines == 2


def test_parse_wrapped_lines():
    # same job split across lines
    inst = parse_instance("1 2\n2 1 1 5\n1 2 3\n")
    assert len(inst.jobs[0]) == 2


@pytest.mark.parametrize("text", [
    "",
    "x y\n",
    "1\n1 1 1 5\n",
    "1 1\n1 1 1\n",              # truncated option
    "1 1\n2 1 1 5\n",            # missing second op
    "1 1\n1 1 2 5\n",            # machine out of range
    "1 1\n1 1 0 5\n",            # machine below range
    "1 1\n1 1 1 0\n",            # non-positive time
    "1 1\n1 1 1 5 7\n",          # trailing token
    "1 1\n1 2 1 5 1 6\n",        # duplicate machine in options
])
def test_parse_rejects_malformed(text):
    with pytest.raises(InstanceFormatError):
        parse_instance(text)


def test_write_examples():
    assert write_instance(parse_instance("1 1\n1 1 1 5\n")) == "1 1\n1 1 1 5\n"
    assert write_instance(fig2_instance()) == "2 2\n2 1 1 5 1 2 3\n1 2 1 8 2 5\n"


def test_round_trip_on_generated_instances():
    rng = np.random.default_rng(7)
    params = GenParams(j_min=1, j_max=6, m_min=1, m_max=5, o_min=1, o_max=4,
                       op_max=4, p_bar=20, d=0.4, seed=0)
    for _ in range(100):
        inst = generate_instance(params, rng)
        again = parse_instance(write_instance(inst))
        assert again.jobs == inst.jobs
        assert (again.num_jobs, again.num_machines) == (inst.num_jobs, inst.num_machines)


def test_generate_degenerate_ranges():
    params = GenParams(j_min=1, j_max=1, m_min=1, m_max=1, o_min=1, o_max=1,
                       op_max=1, p_bar=1, d=0.0, seed=3)
    inst = generate_instance(params)
    assert inst.num_jobs == 1 and inst.num_machines == 1
    assert inst.jobs[0].operations[0].options == ((0, 1),)


def test_generate_zero_deviation_gives_equal_times():
    params = GenParams(j_min=2, j_max=4, m_min=4, m_max=6, o_min=2, o_max=3,
                       op_max=6, p_bar=30, d=0.0, seed=5)
    rng = np.random.default_rng(11)
    for _ in range(20):
        inst = generate_instance(params, rng)
        for job in inst.jobs:
            for op in job.operations:
                times = {p for _, p in op.options}
                assert len(times) == 1


def test_generate_option_count_bounds():
    params = GenParams(j_min=2, j_max=4, m_min=2, m_max=8, o_min=1, o_max=3,
                       op_max=6, p_bar=10, d=0.2, seed=9)
    rng = np.random.default_rng(2)
    for _ in range(50):
        inst = generate_instance(params, rng)
        lo = min(4, inst.num_machines)
        hi = min(params.op_max, inst.num_machines)
        for job in inst.jobs:
            for op in job.operations:
                assert lo <= len(op.options) <= max(lo, hi)


def test_generate_times_within_bounds():
    params = GenParams(j_min=2, j_max=3, m_min=2, m_max=3, o_min=1, o_max=2,
                       op_max=3, p_bar=15, d=0.3, seed=1)
    rng = np.random.default_rng(4)
    cap = int(np.ceil(params.p_bar * (1 + params.d)))
    for _ in range(200):
        inst = generate_instance(params, rng)
        for job in inst.jobs:
            for op in job.operations:
                for _, p in op.options:
                    assert 1 <= p <= cap


def test_generate_deterministic_given_seed():
    params = GenParams(j_min=2, j_max=5, m_min=2, m_max=4, o_min=1, o_max=3,
                       op_max=4, p_bar=12, d=0.2, seed=77)
    assert generate_instance(params) == generate_instance(params)


def test_generated_job_counts_uniform():
    scipy_stats = pytest.importorskip("scipy.stats")
    params = GenParams(j_min=5, j_max=9, m_min=2, m_max=2, o_min=1, o_max=1,
                       op_max=2, p_bar=5, d=0.0, seed=0)
    rng = np.random.default_rng(123)
    counts = np.zeros(5)
    for _ in range(1000):
        inst = generate_instance(params, rng)
        counts[inst.num_jobs - 5] += 1
    _, p_value = scipy_stats.chisquare(counts)
    assert p_value > 0.01


def test_invariant_checks():
    with pytest.raises(ValueError):
        Operation(())
    with pytest.raises(ValueError):
        Operation(((0, 0),))
    with pytest.raises(ValueError):
        Job(())
    op = Operation(((0, 5),))
    with pytest.raises(ValueError):
        Instance(1, 1, (Job((Operation(((3, 5),)),)),))
    with pytest.raises(ValueError):
        Instance(2, 1, (Job((op,)),))


def test_cached_tables():
    inst = fig2_instance()
    assert inst.mean_suffix[0].tolist() == [8.0, 3.0, 0.0]
    assert inst.mean_suffix[1].tolist() == [6.5, 0.0]
    assert inst.min_suffix[0].tolist() == [8, 3, 0]
    assert inst.min_suffix[1].tolist() == [5, 0]
    assert inst.machine_max_time.tolist() == [8, 5]
    assert inst.forced_machine[0].tolist() == [0, 1]
    assert inst.forced_machine[1].tolist() == [-1]
