"""Work partitioning across devices and schedule construction.

Repetition spaces are linearized row-major and split into contiguous,
near-equal chunks, one per logical device; earlier devices take the
remainder.  The schedule orders tasks by connector dataflow with a
deterministic declaration-order tie-break; tasks reading a value precede
the task that updates it in place.
"""

from __future__ import annotations

from dataclasses import dataclass

from .metamodel import (AllocKind, Component, ComponentKind, Direction, Model,
                        StereotypeKind, is_host_processor, resolve_side_path)


class MissingGeometry(ValueError):
    pass


class CyclicTaskGraph(ValueError):
    pass


class UnallocatedTask(ValueError):
    def __init__(self, task_path: str):
        super().__init__(f"leaf task '{task_path}' has no task allocation")
        self.task_path = task_path


@dataclass(frozen=True)
class WorkRange:
    offset: int
    count: int


@dataclass(frozen=True)
class KernelLaunch:
    task_path: str
    device_index: int
    range: WorkRange
    global_size: int
    local_size: int


@dataclass(frozen=True)
class HostOp:
    task_path: str
    op: str


@dataclass(frozen=True)
class DeviceStep:
    task_path: str
    op: str
    launches: tuple[KernelLaunch, ...]

    @property
    def total_work(self) -> int:
        return sum(launch.range.count for launch in self.launches)


@dataclass(frozen=True)
class LoopStep:
    task_path: str
    body: tuple
    tolerance: float
    max_iterations: int
    relres_port: str


@dataclass(frozen=True)
class Schedule:
    steps: tuple

    def device_steps(self) -> list[DeviceStep]:
        """All DeviceSteps in schedule order, descending into loops."""
        found: list[DeviceStep] = []

        def walk(steps):
            for step in steps:
                if isinstance(step, DeviceStep):
                    found.append(step)
                elif isinstance(step, LoopStep):
                    walk(step.body)

        walk(self.steps)
        return found

    def host_ops(self) -> list[HostOp]:
        found: list[HostOp] = []

        def walk(steps):
            for step in steps:
                if isinstance(step, HostOp):
                    found.append(step)
                elif isinstance(step, LoopStep):
                    walk(step.body)

        walk(self.steps)
        return found


def partition_equally(total_work: int, device_count: int) -> list[WorkRange]:
    """Split [0, total_work) into contiguous chunks whose sizes differ by at most one.

    The first total_work % device_count chunks take the extra item; with
    more devices than work only the first total_work devices get a range.
    """
    if total_work < 1 or device_count < 1:
        raise ValueError("total_work and device_count must be positive")
    used = min(device_count, total_work)
    base, extra = divmod(total_work, used)
    ranges: list[WorkRange] = []
    offset = 0
    for i in range(used):
        count = base + (1 if i < extra else 0)
        ranges.append(WorkRange(offset, count))
        offset += count
    return ranges


def _pe_local_size(model: Model, device_path: str | None) -> int:
    """Work-group size: the processing-element multiplicity inside one compute unit."""
    candidates: list[str] = []
    if device_path is not None:
        candidates.append(device_path)
    else:
        stack = [("", model.root(ComponentKind.PLATFORM))]
        while stack:
            prefix, comp = stack.pop(0)
            if comp is None:
                continue
            for part in comp.parts:
                sub = model.component(ComponentKind.PLATFORM, part.type_ref)
                if sub is None:
                    continue
                path = f"{prefix}.{part.name}" if prefix else part.name
                if sub.stereotype is not None and sub.stereotype.kind is StereotypeKind.PROCESSOR:
                    candidates.append(path)
                stack.append((path, sub))
    for path in candidates:
        part = resolve_side_path(model, ComponentKind.PLATFORM, path)
        comp = model.component(ComponentKind.PLATFORM, part.type_ref) if part else None
        if comp is None:
            continue
        for sub_part in comp.parts:
            sub = model.component(ComponentKind.PLATFORM, sub_part.type_ref)
            if sub is not None and sub.stereotype is not None \
                    and sub.stereotype.kind is StereotypeKind.PROCESSOR:
                return sub_part.shaped.total if sub_part.shaped is not None else 1
    raise MissingGeometry(
        "no processing-element instance found inside the device processor")


def derive_launch_config(task: Component, platform: Model, ranges: list[WorkRange],
                         task_path: str = "", device_path: str | None = None
                         ) -> list[KernelLaunch]:
    """One launch per work range, with the global size rounded up to the work-group size."""
    local = _pe_local_size(platform, device_path)
    launches = []
    for i, rng in enumerate(ranges):
        global_size = (rng.count + local - 1) // local * local
        launches.append(KernelLaunch(task_path=task_path or task.name, device_index=i,
                                     range=rng, global_size=global_size, local_size=local))
    return launches


def _order_parts(model: Model, comp: Component, path_prefix: str) -> list:
    """Topologically order a component's parts by connector dataflow.

    Adds write-after-read edges: parts reading a value through in ports
    run before the part consuming the same value through an inout port.
    """
    index = {part.name: i for i, part in enumerate(comp.parts)}
    edges: dict[int, set[int]] = {i: set() for i in index.values()}

    def port_of(endpoint: str):
        segs = endpoint.split(".")
        if len(segs) == 1:
            return None, comp.port(segs[0])
        part = comp.part(segs[0])
        sub = model.component(ComponentKind.APPLICATION, part.type_ref) if part else None
        return segs[0], sub.port(segs[1]) if sub else None

    by_source: dict[str, list[tuple[str | None, object]]] = {}
    for conn in comp.connectors:
        src_part, _ = port_of(conn.source)
        dst_part, dst_port = port_of(conn.target)
        if src_part is not None and dst_part is not None and src_part != dst_part:
            edges[index[dst_part]].add(index[src_part])
        by_source.setdefault(conn.source, []).append((dst_part, dst_port))

    for targets in by_source.values():
        readers = [p for p, port in targets
                   if p is not None and port is not None and port.direction is Direction.IN]
        writers = sorted((p for p, port in targets
                          if p is not None and port is not None
                          and port.direction is Direction.INOUT),
                         key=lambda p: index[p])
        if writers:
            for reader in readers:
                if reader != writers[0]:
                    edges[index[writers[0]]].add(index[reader])
            for earlier, later in zip(writers, writers[1:]):
                edges[index[later]].add(index[earlier])

    remaining = dict(edges)
    done: set[int] = set()
    order: list = []
    while remaining:
        ready = [i for i, deps in remaining.items() if deps <= done]
        if not ready:
            stuck = sorted(comp.parts[i].name for i in remaining)
            where = path_prefix or "<root>"
            raise CyclicTaskGraph(
                f"connector cycle among tasks of '{where}': {', '.join(stuck)}")
        i = min(ready)  # declaration-order tie-break
        order.append(comp.parts[i])
        done.add(i)
        del remaining[i]
    return order


def build_schedule(model: Model, device_count: int) -> Schedule:
    """Derive the execution schedule for a conformant model on device_count devices."""
    if device_count < 1:
        raise ValueError("device_count must be positive")
    task_targets = {link.source_path: link.target_path
                    for link in model.allocations if link.kind is AllocKind.TASK}

    def schedule_component(comp: Component, prefix: str) -> list:
        steps: list = []
        for part in _order_parts(model, comp, prefix):
            sub = model.component(ComponentKind.APPLICATION, part.type_ref)
            path = f"{prefix}.{part.name}" if prefix else part.name
            if sub.is_leaf_task:
                target = task_targets.get(path)
                if target is None:
                    raise UnallocatedTask(path)
                if is_host_processor(model, target):
                    steps.append(HostOp(task_path=path, op=sub.elementary_op))
                else:
                    total = sub.repetition_space.total if sub.repetition_space else 1
                    ranges = partition_equally(total, device_count)
                    launches = derive_launch_config(sub, model, ranges,
                                                    task_path=path, device_path=target)
                    steps.append(DeviceStep(task_path=path, op=sub.elementary_op,
                                            launches=tuple(launches)))
            elif sub.until is not None:
                body = schedule_component(sub, path)
                steps.append(LoopStep(task_path=path, body=tuple(body),
                                      tolerance=sub.until.tolerance,
                                      max_iterations=sub.repetition_space.total,
                                      relres_port=f"{path}.{sub.until.port}"))
            else:
                steps.extend(schedule_component(sub, path))
        return steps

    root = model.root(ComponentKind.APPLICATION)
    return Schedule(steps=tuple(schedule_component(root, "")))
