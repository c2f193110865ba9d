"""Deployment intrinsics: the fixed operation vocabulary for leaf tasks.

Device intrinsics become OpenCL kernels; host intrinsics become scalar
statements in the generated host code.  Port names are part of each
signature, so a task component deploying an intrinsic must declare
exactly the intrinsic's ports (optional ones may be omitted).
"""

from __future__ import annotations

from dataclasses import dataclass

from .metamodel import Component, Direction


class UnknownIntrinsic(ValueError):
    def __init__(self, task_path: str, op_name: str):
        super().__init__(f"task '{task_path}' deploys unknown intrinsic '{op_name}'")
        self.task_path = task_path
        self.op_name = op_name


class IntrinsicShapeMismatch(ValueError):
    pass


@dataclass(frozen=True)
class PortSpec:
    name: str
    direction: Direction
    scalar: bool = False       # shape total must be exactly 1
    integer: bool = False      # int32/int64 expected instead of float
    optional: bool = False


@dataclass(frozen=True)
class IntrinsicSpec:
    name: str
    kind: str  # "device" or "host"
    ports: tuple[PortSpec, ...]

    def port_spec(self, name: str) -> PortSpec | None:
        for spec in self.ports:
            if spec.name == name:
                return spec
        return None


_IN, _OUT, _INOUT = Direction.IN, Direction.OUT, Direction.INOUT

INTRINSICS: dict[str, IntrinsicSpec] = {
    spec.name: spec for spec in (
        # sparse y = A x over CSR rows; repetition space = row count
        IntrinsicSpec("spmv_csr", "device", (
            PortSpec("rowptr", _IN, integer=True),
            PortSpec("colidx", _IN, integer=True),
            PortSpec("values", _IN),
            PortSpec("x", _IN),
            PortSpec("y", _OUT),
        )),
        # per-work-group partial dot products, reduced to s on the host
        IntrinsicSpec("dot_partial", "device", (
            PortSpec("a", _IN),
            PortSpec("b", _IN),
            PortSpec("s", _OUT, scalar=True),
        )),
        # y += a * x; with the a port omitted the increment is plain y += x
        IntrinsicSpec("axpy", "device", (
            PortSpec("y", _INOUT),
            PortSpec("x", _IN),
            PortSpec("a", _IN, scalar=True, optional=True),
        )),
        IntrinsicSpec("scale", "device", (
            PortSpec("y", _INOUT),
            PortSpec("a", _IN, scalar=True),
        )),
        IntrinsicSpec("copy", "device", (
            PortSpec("src", _IN),
            PortSpec("dst", _OUT),
        )),
        IntrinsicSpec("sub", "device", (
            PortSpec("x", _IN),
            PortSpec("y", _IN),
            PortSpec("z", _OUT),
        )),
        IntrinsicSpec("div", "host", (
            PortSpec("num", _IN, scalar=True),
            PortSpec("den", _IN, scalar=True),
            PortSpec("q", _OUT, scalar=True),
        )),
        IntrinsicSpec("neg", "host", (
            PortSpec("a", _IN, scalar=True),
            PortSpec("z", _OUT, scalar=True),
        )),
        # sqrt(num) / sqrt(den): relative norm from two squared norms
        IntrinsicSpec("rel_residual", "host", (
            PortSpec("num", _IN, scalar=True),
            PortSpec("den", _IN, scalar=True),
            PortSpec("z", _OUT, scalar=True),
        )),
    )
}


def check_task_signature(task_path: str, comp: Component) -> IntrinsicSpec:
    """Validate a leaf task's ports against its deployed intrinsic.

    Raises UnknownIntrinsic or IntrinsicShapeMismatch; returns the spec.
    """
    op = comp.elementary_op
    if op is None or op not in INTRINSICS:
        raise UnknownIntrinsic(task_path, op or "<none>")
    spec = INTRINSICS[op]
    declared = {p.name for p in comp.ports}
    expected = {s.name for s in spec.ports}
    required = {s.name for s in spec.ports if not s.optional}
    if not required <= declared or not declared <= expected:
        raise IntrinsicShapeMismatch(
            f"task '{task_path}': intrinsic '{op}' expects ports "
            f"{sorted(expected)} (optional: {sorted(expected - required)}), "
            f"got {sorted(declared)}")
    extents: set[int] = set()
    for port in comp.ports:
        pspec = spec.port_spec(port.name)
        if pspec.direction is not port.direction:
            raise IntrinsicShapeMismatch(
                f"task '{task_path}': port '{port.name}' must be {pspec.direction.value}")
        if pspec.integer != (not port.data_type.is_float):
            kind = "an integer" if pspec.integer else "a floating-point"
            raise IntrinsicShapeMismatch(
                f"task '{task_path}': port '{port.name}' must have {kind} type")
        if pspec.scalar:
            if port.shape.total != 1:
                raise IntrinsicShapeMismatch(
                    f"task '{task_path}': port '{port.name}' must be scalar")
        elif port.name not in ("rowptr", "colidx", "values"):
            extents.add(port.shape.total)
    if spec.kind == "device":
        if len(extents) > 1:
            raise IntrinsicShapeMismatch(
                f"task '{task_path}': vector ports disagree on extent: {sorted(extents)}")
        repeat = comp.repetition_space.total if comp.repetition_space else 1
        if extents and repeat not in (1, next(iter(extents))):
            raise IntrinsicShapeMismatch(
                f"task '{task_path}': repetition space {repeat} does not match "
                f"vector extent {next(iter(extents))}")
        if op == "spmv_csr":
            rowptr = comp.port("rowptr")
            n = comp.port("y").shape.total
            if rowptr.shape.total != n + 1:
                raise IntrinsicShapeMismatch(
                    f"task '{task_path}': rowptr extent must be row count + 1")
            if comp.port("colidx").shape.total != comp.port("values").shape.total:
                raise IntrinsicShapeMismatch(
                    f"task '{task_path}': colidx and values extents differ")
    return spec
