import pytest
from hypothesis import given, strategies as st

from harness.caseengine import (
    CaseDefinition,
    CaseDefinitionError,
    CaseStack,
    SuiteDefinitionError,
    canonical_params,
    case_uuid,
    define_case,
    fnv1a_64,
    generate_suite,
)
from harness.suite import DEFAULT_REGISTRY, default_suite


def fnv1a_64_oracle(data: bytes) -> int:
    # prime 2**40 + 2**8 + 0xb3 applied as shifts and adds
    h = 14695981039346656037
    for byte in data:
        h ^= byte
        h = (h + (h << 1) + (h << 4) + (h << 5) + (h << 7) + (h << 8) + (h << 40)) % 2**64
    return h


def listing_generator(stack):
    stack.push("IGR", {"igr": "T", "alf_factor": 10, "num_igr_iters": 10, "num_igr_warm_start_iters": 10})
    for order in [3, 5]:
        stack.push(f"igr_order={order}", {"igr_order": order})
        yield define_case(stack, "Jacobi", {"igr_iter_solver": 1})
        if order == 5:
            yield define_case(stack, "Gauss Seidel", {"igr_iter_solver": 2})
        stack.pop()
    stack.pop()


# FNV-1a and uuids

@pytest.mark.parametrize("data", [b"", b"a", b"foobar", b"m=10", bytes(range(256))])
def test_fnv_matches_oracle(data):
    assert fnv1a_64(data) == fnv1a_64_oracle(data)


def test_fnv_published_vectors():
    assert fnv1a_64(b"") == 0xCBF29CE484222325
    assert fnv1a_64(b"a") == 0xAF63DC4C8601EC8C
    assert fnv1a_64(b"foobar") == 0x85944171F73967E8


def test_empty_params_uuid_is_offset_basis():
    assert case_uuid({}) == "84222325"
    assert case_uuid({}) == f"{fnv1a_64_oracle(b'') & 0xFFFFFFFF:08x}"


def test_uuid_determinism_and_distinctness():
    assert case_uuid({"m": 10}) == case_uuid({"m": 10})
    assert case_uuid({"m": 10}) != case_uuid({"m": 11})


def test_uuid_frozen_vectors():
    # oracle path: canonical text -> shift/add FNV -> low 32 bits
    for params, text in [
        ({"m": 10}, "m=10"),
        ({"igr": True, "cfl": 0.1, "name": "x"}, "cfl=0.1\nigr=T\nname=x"),
        ({"flag": False, "v": 1e-30}, "flag=F\nv=1e-30"),
    ]:
        assert canonical_params(params) == text
        assert case_uuid(params) == f"{fnv1a_64_oracle(text.encode()) & 0xFFFFFFFF:08x}"


def test_int_and_float_canonicalize_differently():
    assert case_uuid({"m": 10}) != case_uuid({"m": 10.0})


_values = st.one_of(st.booleans(), st.integers(-10**6, 10**6),
                    st.floats(allow_nan=False, allow_infinity=False), st.text(max_size=5))


@given(st.dictionaries(st.text(min_size=1, max_size=5), _values, max_size=6), st.randoms())
def test_uuid_ignores_insertion_order(params, rnd):
    keys = list(params)
    rnd.shuffle(keys)
    shuffled = {k: params[k] for k in keys}
    assert case_uuid(shuffled) == case_uuid(params)
    assert len(case_uuid(params)) == 8
    int(case_uuid(params), 16)


# stack

def test_push_then_flatten():
    stack = CaseStack()
    stack.push("IGR", {"igr": True, "alf_factor": 10})
    assert stack.flatten() == {"igr": True, "alf_factor": 10}


def test_later_push_wins():
    stack = CaseStack()
    stack.push("a", {"k": 1})
    stack.push("b", {"k": 2})
    assert stack.flatten() == {"k": 2}


def test_push_empty_map_extends_trace_only():
    stack = CaseStack()
    stack.push("a", {"k": 1})
    stack.push("b", {})
    assert stack.flatten() == {"k": 1}
    assert stack.trace() == "a -> b"


def test_push_pop_restores():
    stack = CaseStack()
    stack.push("base", {"m": 1})
    before = stack.snapshot()
    stack.push("A", {"x": 1})
    stack.pop()
    assert stack.snapshot() == before and len(stack) == 1


def test_pop_leaves_earlier_frames():
    stack = CaseStack()
    stack.push("A", {"a": 1})
    stack.push("B", {"b": 1})
    stack.pop()
    assert stack.flatten() == {"a": 1} and stack.trace() == "A"


def test_pop_empty_raises():
    with pytest.raises(IndexError):
        CaseStack().pop()


def test_push_rejects_unsupported_values():
    with pytest.raises(CaseDefinitionError):
        CaseStack().push("x", {"v": [1, 2]})


# define_case

def test_listing_flow_gauss_seidel():
    cases = list(listing_generator(CaseStack()))
    gs = cases[-1]
    assert {"igr": "T", "igr_order": 5, "igr_iter_solver": 2}.items() <= gs.params.items()
    assert gs.trace.endswith("Gauss Seidel")
    assert gs.trace == "IGR -> igr_order=5 -> Gauss Seidel"


def test_define_case_on_empty_stack():
    case = define_case(CaseStack(), "base", {"m": 10})
    assert dict(case.params) == {"m": 10}
    assert case.trace == "base"


def test_define_case_leaves_stack_untouched_and_extra_wins():
    stack = CaseStack()
    stack.push("s", {"m": 1})
    before = stack.snapshot()
    a = define_case(stack, "a", {"m": 2, "x": 1})
    b = define_case(stack, "b", {"x": 2})
    assert stack.snapshot() == before
    assert a.params["m"] == 2
    assert a.uuid != b.uuid


def test_define_case_rejects_bad_extra():
    with pytest.raises(CaseDefinitionError):
        define_case(CaseStack(), "x", {"v": None})


def test_case_definition_is_immutable_and_uuid_consistent():
    case = CaseDefinition({"m": 1}, "t")
    with pytest.raises(TypeError):
        case.params["m"] = 2
    assert case.uuid == case_uuid({"m": 1})


# suites

def test_listing_generator_yields_three_cases():
    cases = generate_suite([listing_generator])
    assert len(cases) == 3
    assert [c.trace.split(" -> ")[-1] for c in cases] == ["Jacobi", "Jacobi", "Gauss Seidel"]


def test_empty_registry():
    assert generate_suite([]) == []


def test_duplicate_uuid_names_both_traces():
    def dup(stack):
        yield define_case(stack, "first", {"m": 1})
        yield define_case(stack, "second", {"m": 1})
    with pytest.raises(SuiteDefinitionError, match="first.*second"):
        generate_suite([dup])


def test_unbalanced_generator_rejected():
    def leaky(stack):
        stack.push("leak", {})
        yield define_case(stack, "x", {})
    with pytest.raises(SuiteDefinitionError, match="leaky"):
        generate_suite([leaky])


def test_echo_prints_uuid_and_trace():
    lines = []
    cases = generate_suite([listing_generator], echo=lines.append)
    assert lines == [f"{c.uuid}  {c.trace}" for c in cases]


def test_shipped_suite_size_and_uniqueness():
    cases = default_suite()
    assert len(cases) >= 24
    assert len({c.uuid for c in cases}) == len(cases)


@pytest.mark.parametrize("generator", DEFAULT_REGISTRY, ids=lambda g: g.__name__)
def test_shipped_generators_are_stack_neutral(generator):
    stack = CaseStack()
    stack.push("outer", {"sentinel": 1})
    before = stack.snapshot()
    list(generator(stack))
    assert len(stack) == 1 and stack.snapshot() == before
