"""OpenCL 1.1 source generation: one kernel file and one host file per model.

Kernels are instantiated from a fixed template per intrinsic; parameter
address-space keywords come from the port's data allocation.  Dot
products are two-stage: per-work-group partials on the device, final
sum on the host in ascending device order.  Output is byte-deterministic
for identical inputs and is locked by golden files in the test suite.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from .dsl import serialize_model
from .intrinsics import UnknownIntrinsic, check_task_signature
from .memmap import DataAllocate, MemoryMap
from .metamodel import (AddressSpace, ComponentKind, DataType, Direction, MemoryRole,
                        Model, memory_role_of)
from .partition import DeviceStep, HostOp, KernelLaunch, LoopStep, Schedule


@dataclass(frozen=True)
class GeneratedUnit:
    file_name: str
    contents: str


_C_TYPES = {DataType.FLOAT32: "float", DataType.FLOAT64: "double",
            DataType.INT32: "int", DataType.INT64: "long"}


def _digest(model: Model) -> str:
    return hashlib.sha256(serialize_model(model).encode()).hexdigest()[:12]


def _model_name(model: Model) -> str:
    return model.application_root


def kernel_name(task_path: str) -> str:
    return "k_" + task_path.replace(".", "_")


class _AllocIndex:
    """Finds the allocation record backing each application port."""

    def __init__(self, model: Model, maps: list[MemoryMap]):
        self.by_node: dict[str, list[tuple[MemoryRole, DataAllocate]]] = {}
        for mm in maps:
            role = memory_role_of(model, mm.owner_path)
            for alloc in mm.data_allocations:
                for node in alloc.associated_parts:
                    self.by_node.setdefault(node, []).append((role, alloc))

    def device_alloc(self, node: str) -> tuple[MemoryRole, DataAllocate] | None:
        for role, alloc in self.by_node.get(node, []):
            if role is not MemoryRole.HOST_RAM:
                return role, alloc
        return None

    def host_alloc(self, node: str) -> DataAllocate | None:
        for role, alloc in self.by_node.get(node, []):
            if role is MemoryRole.HOST_RAM:
                return alloc
        return None


def _task_component(model: Model, task_path: str):
    comp = model.root(ComponentKind.APPLICATION)
    for seg in task_path.split("."):
        part = comp.part(seg)
        comp = model.component(ComponentKind.APPLICATION, part.type_ref)
    return comp


@dataclass(frozen=True)
class _Param:
    name: str
    text: str                  # parameter declaration in the kernel signature
    kind: str                  # "buffer" | "scalar" | "local" | "partials"
    alloc: DataAllocate | None


def _port_param(model: Model, index: _AllocIndex, task_path: str, port) -> _Param:
    node = f"{task_path}.{port.name}"
    ctype = _C_TYPES[port.data_type]
    device = index.device_alloc(node)
    if device is None:
        # host-resident scalar, passed by value
        return _Param(port.name, f"const {ctype} {port.name}", "scalar",
                      index.host_alloc(node))
    role, alloc = device
    space = alloc.space_address
    if space is AddressSpace.GLOBAL:
        const = "const " if port.direction is Direction.IN else ""
        return _Param(port.name, f"__global {const}{ctype}* {port.name}", "buffer", alloc)
    if space is AddressSpace.CONSTANT:
        return _Param(port.name, f"__constant {ctype}* {port.name}", "buffer", alloc)
    if space is AddressSpace.LOCAL:
        return _Param(port.name, f"__local {ctype}* {port.name}", "local", alloc)
    return _Param(port.name, f"{ctype}* {port.name}", "buffer", alloc)


def _task_params(model: Model, index: _AllocIndex, task_path: str) -> list[_Param]:
    comp = _task_component(model, task_path)
    spec = check_task_signature(task_path, comp)
    params = [_Param("first", "const int first", "range", None),
              _Param("count", "const int count", "range", None)]
    for pspec in spec.ports:
        port = comp.port(pspec.name)
        if port is None:
            continue
        node = f"{task_path}.{port.name}"
        if port.direction is Direction.OUT and index.device_alloc(node) is None:
            # host-resident result (dot scalar): delivered via the partials
            # buffer and the host reduction, not a kernel parameter
            continue
        params.append(_port_param(model, index, task_path, port))
    if comp.elementary_op == "dot_partial":
        ctype = _C_TYPES[comp.port("a").data_type]
        params.append(_Param("partials", f"__global {ctype}* partials", "partials", None))
    return params


_KERNEL_BODIES = {
    "spmv_csr": [
        "const int gid = get_global_id(0);",
        "if (gid >= count) return;",
        "const int i = first + gid;",
        "double acc = 0.0;",
        "for (int k = rowptr[i]; k < rowptr[i + 1]; ++k) {",
        "    acc += values[k] * x[colidx[k]];",
        "}",
        "y[i] = acc;",
    ],
    # one accumulator work-item per work-group: no barriers, so the range
    # guard may return early without deadlocking the group
    "dot_partial": [
        "const int gid = get_global_id(0);",
        "if (gid >= count) return;",
        "if (get_local_id(0) != 0) return;",
        "int lim = gid + (int)get_local_size(0);",
        "if (lim > count) lim = count;",
        "double acc = 0.0;",
        "for (int k = gid; k < lim; ++k) {",
        "    acc += a[first + k] * b[first + k];",
        "}",
        "partials[get_group_id(0)] = acc;",
    ],
    "scale": [
        "const int gid = get_global_id(0);",
        "if (gid >= count) return;",
        "const int i = first + gid;",
        "y[i] *= a;",
    ],
    "copy": [
        "const int gid = get_global_id(0);",
        "if (gid >= count) return;",
        "const int i = first + gid;",
        "dst[i] = src[i];",
    ],
    "sub": [
        "const int gid = get_global_id(0);",
        "if (gid >= count) return;",
        "const int i = first + gid;",
        "z[i] = x[i] - y[i];",
    ],
}


def _axpy_body(has_scalar: bool) -> list[str]:
    update = "y[i] += a * x[i];" if has_scalar else "y[i] += x[i];"
    return [
        "const int gid = get_global_id(0);",
        "if (gid >= count) return;",
        "const int i = first + gid;",
        update,
    ]


def _distinct_device_tasks(schedule: Schedule) -> list[DeviceStep]:
    seen: set[str] = set()
    tasks: list[DeviceStep] = []
    for step in schedule.device_steps():
        if step.task_path not in seen:
            seen.add(step.task_path)
            tasks.append(step)
    return tasks


def generate_kernels(model: Model, maps: list[MemoryMap], schedule: Schedule) -> GeneratedUnit:
    """Emit the kernel source file: one entry point per distinct device task."""
    index = _AllocIndex(model, maps)
    name = _model_name(model)
    out = [
        "/*",
        f" * OpenCL kernels for model '{name}'.",
        f" * generated by gmodelc; model digest sha256:{_digest(model)}",
        " */",
    ]
    uses_double = any(
        port.data_type is DataType.FLOAT64
        for step in _distinct_device_tasks(schedule)
        for port in _task_component(model, step.task_path).ports)
    if uses_double:
        out.append("")
        out.append("#pragma OPENCL EXTENSION cl_khr_fp64 : enable")
    names_seen: dict[str, str] = {}
    for step in _distinct_device_tasks(schedule):
        comp = _task_component(model, step.task_path)
        if step.op not in _KERNEL_BODIES and step.op != "axpy":
            raise UnknownIntrinsic(step.task_path, step.op)
        kname = kernel_name(step.task_path)
        if kname in names_seen:
            raise ValueError(f"kernel name '{kname}' generated for both "
                             f"'{names_seen[kname]}' and '{step.task_path}'")
        names_seen[kname] = step.task_path
        params = _task_params(model, index, step.task_path)
        body = _axpy_body(comp.port("a") is not None) if step.op == "axpy" \
            else _KERNEL_BODIES[step.op]
        out.append("")
        head = f"__kernel void {kname}("
        pad = " " * len(head)
        decls = [p.text for p in params]
        out.append(head + decls[0] + ",")
        out.extend(pad + d + "," for d in decls[1:-1])
        out.append(pad + decls[-1] + ")")
        out.append("{")
        out.extend("    " + line for line in body)
        out.append("}")
    return GeneratedUnit(file_name=f"{name}_kernels.cl",
                         contents="\n".join(out) + "\n")


# -- host program -------------------------------------------------------------


def _float_literal(value: float) -> str:
    text = repr(float(value))
    return text if any(c in text for c in ".einf") else text + ".0"


def _group_count(launch: KernelLaunch) -> int:
    return launch.global_size // launch.local_size


class _HostWriter:
    def __init__(self):
        self.lines: list[str] = []
        self.depth = 1

    def put(self, text: str = ""):
        self.lines.append("    " * self.depth + text if text else "")

    def open(self, text: str):
        self.put(text)
        self.depth += 1

    def close(self, text: str = "}"):
        self.depth -= 1
        self.put(text)


def generate_host(model: Model, maps: list[MemoryMap], schedule: Schedule,
                  device_count: int) -> GeneratedUnit:
    """Emit the host orchestration source for device_count logical devices."""
    if device_count < 1:
        raise ValueError("device_count must be positive")
    index = _AllocIndex(model, maps)
    name = _model_name(model)
    root = model.root(ComponentKind.APPLICATION)
    device_tasks = _distinct_device_tasks(schedule)
    task_params = {step.task_path: _task_params(model, index, step.task_path)
                   for step in device_tasks}

    device_allocs: list[tuple[MemoryRole, DataAllocate]] = []
    host_allocs: list[DataAllocate] = []
    seen_names: set[str] = set()
    for mm in maps:
        role = memory_role_of(model, mm.owner_path)
        for alloc in mm.data_allocations:
            if alloc.name in seen_names:
                continue
            seen_names.add(alloc.name)
            if role is MemoryRole.HOST_RAM:
                host_allocs.append(alloc)
            else:
                device_allocs.append((role, alloc))

    # dot partial buffers: one per (task, device) pair, sized by work groups
    partials: list[tuple[str, int, int]] = []   # (kernel, device, groups)
    for step in device_tasks:
        if step.op == "dot_partial":
            for launch in step.launches:
                partials.append((kernel_name(step.task_path), launch.device_index,
                                 _group_count(launch)))

    root_inputs = [p for p in root.ports if p.direction is Direction.IN]
    root_outputs = [p for p in root.ports if p.direction is Direction.OUT]

    w = _HostWriter()
    w.depth = 0
    w.put("/*")
    w.put(f" * OpenCL host program for model '{name}' on {device_count} device(s).")
    w.put(f" * generated by gmodelc; model digest sha256:{_digest(model)}")
    w.put(" */")
    w.put("#include <CL/cl.h>")
    w.put("#include <math.h>")
    w.put("#include <stdio.h>")
    w.put("#include <stdlib.h>")
    w.put("#include <string.h>")
    w.put("")
    w.put("#define CHECK(err, what) \\")
    w.put("    do { if ((err) != CL_SUCCESS) { \\")
    w.put('        fprintf(stderr, "%s failed: %d\\n", (what), (int)(err)); \\')
    w.put("        exit(2); } } while (0)")
    w.put("")
    w.put("static char* read_text_file(const char* path, size_t* size_out)")
    w.put("{")
    w.put('    FILE* f = fopen(path, "rb");')
    w.put('    if (!f) { fprintf(stderr, "cannot open %s\\n", path); exit(2); }')
    w.put("    fseek(f, 0, SEEK_END);")
    w.put("    long size = ftell(f);")
    w.put("    fseek(f, 0, SEEK_SET);")
    w.put("    char* text = (char*)malloc((size_t)size + 1);")
    w.put("    fread(text, 1, (size_t)size, f);")
    w.put("    text[size] = 0;")
    w.put("    fclose(f);")
    w.put("    if (size_out) *size_out = (size_t)size;")
    w.put("    return text;")
    w.put("}")
    w.put("")
    w.put("static void load_doubles(const char* path, double* out, long count)")
    w.put("{")
    w.put('    FILE* f = fopen(path, "r");')
    w.put('    if (!f) { fprintf(stderr, "cannot open %s\\n", path); exit(2); }')
    w.put("    for (long i = 0; i < count; ++i) {")
    w.put('        if (fscanf(f, "%lf", &out[i]) != 1) { fclose(f); exit(2); }')
    w.put("    }")
    w.put("    fclose(f);")
    w.put("}")
    w.put("")
    w.put("static void load_ints(const char* path, int* out, long count)")
    w.put("{")
    w.put('    FILE* f = fopen(path, "r");')
    w.put('    if (!f) { fprintf(stderr, "cannot open %s\\n", path); exit(2); }')
    w.put("    for (long i = 0; i < count; ++i) {")
    w.put('        if (fscanf(f, "%d", &out[i]) != 1) { fclose(f); exit(2); }')
    w.put("    }")
    w.put("    fclose(f);")
    w.put("}")
    w.put("")
    w.put("static void store_doubles(const char* path, const double* data, long count)")
    w.put("{")
    w.put('    FILE* f = fopen(path, "w");')
    w.put('    if (!f) { fprintf(stderr, "cannot open %s\\n", path); exit(2); }')
    w.put('    for (long i = 0; i < count; ++i) fprintf(f, "%.17g\\n", data[i]);')
    w.put("    fclose(f);")
    w.put("}")
    w.put("")
    w.put("int main(void)")
    w.put("{")
    w.depth = 1
    w.put(f"enum {{ DEVICE_COUNT = {device_count} }};")
    w.put("cl_int err;")
    w.put("cl_platform_id cl_platform;")
    w.put("err = clGetPlatformIDs(1, &cl_platform, NULL);")
    w.put('CHECK(err, "clGetPlatformIDs");')
    w.put("cl_device_id devices[DEVICE_COUNT];")
    w.put("err = clGetDeviceIDs(cl_platform, CL_DEVICE_TYPE_ALL, DEVICE_COUNT, devices, NULL);")
    w.put('CHECK(err, "clGetDeviceIDs");')
    w.put("cl_context context = clCreateContext(NULL, DEVICE_COUNT, devices, NULL, NULL, &err);")
    w.put('CHECK(err, "clCreateContext");')
    w.put("cl_command_queue queues[DEVICE_COUNT];")
    w.put("for (int d = 0; d < DEVICE_COUNT; ++d) {")
    w.put("    queues[d] = clCreateCommandQueue(context, devices[d], 0, &err);")
    w.put('    CHECK(err, "clCreateCommandQueue");')
    w.put("}")
    w.put("")
    w.put("size_t source_size;")
    w.put(f'char* source = read_text_file("{name}_kernels.cl", &source_size);')
    w.put("cl_program program = clCreateProgramWithSource(context, 1, "
          "(const char**)&source, &source_size, &err);")
    w.put('CHECK(err, "clCreateProgramWithSource");')
    w.put("err = clBuildProgram(program, DEVICE_COUNT, devices, NULL, NULL, NULL);")
    w.put('CHECK(err, "clBuildProgram");')
    w.put("")
    for step in device_tasks:
        kname = kernel_name(step.task_path)
        w.put(f'cl_kernel {kname} = clCreateKernel(program, "{kname}", &err);')
        w.put(f'CHECK(err, "clCreateKernel {kname}");')
    w.put("")
    w.put("/* host-resident scalars */")
    for alloc in host_allocs:
        w.put(f"double h_{alloc.name} = 0.0;")
    w.put("")
    w.put("/* one buffer per device-side data allocation */")
    for role, alloc in device_allocs:
        w.put(f"cl_mem buf_{alloc.name} = clCreateBuffer(context, CL_MEM_READ_WRITE, "
              f"{alloc.size_bytes}, NULL, &err);")
        w.put(f'CHECK(err, "clCreateBuffer {alloc.name}");')
    w.put("")
    w.put("/* work-group partial buffers for dot reductions */")
    for kname, dev, groups in partials:
        w.put(f"cl_mem part_{kname}_d{dev} = clCreateBuffer(context, CL_MEM_READ_WRITE, "
              f"{groups} * sizeof(double), NULL, &err);")
        w.put('CHECK(err, "clCreateBuffer partials");')
        w.put(f"double* ph_{kname}_d{dev} = (double*)malloc({groups} * sizeof(double));")
    w.put("")
    w.put("/* load and upload input data */")
    uploaded: set[str] = set()
    for port in root_inputs:
        device = index.device_alloc(port.name)
        if device is None or device[1].name in uploaded:
            continue
        _, alloc = device
        uploaded.add(alloc.name)
        n = alloc.dim_allocation.total
        ctype = _C_TYPES[alloc.type_allocation]
        loader = "load_doubles" if alloc.type_allocation.is_float else "load_ints"
        w.put(f"{ctype}* in_{alloc.name} = ({ctype}*)malloc({alloc.size_bytes});")
        w.put(f'{loader}("{name}_{port.name}.txt", in_{alloc.name}, {n});')
        w.put(f"err = clEnqueueWriteBuffer(queues[0], buf_{alloc.name}, CL_TRUE, 0, "
              f"{alloc.size_bytes}, in_{alloc.name}, 0, NULL, NULL);")
        w.put(f'CHECK(err, "write {alloc.name}");')
    w.put("")
    w.put("int iters = 0;")
    w.put("int converged = 1;")
    w.put("")

    def emit_device_step(step: DeviceStep):
        kname = kernel_name(step.task_path)
        params = task_params[step.task_path]
        for launch in step.launches:
            d = launch.device_index
            w.open("{")
            w.put(f"const cl_int first = {launch.range.offset};")
            w.put(f"const cl_int count = {launch.range.count};")
            w.put(f"const size_t global_size = {launch.global_size};")
            w.put(f"const size_t local_size = {launch.local_size};")
            for i, param in enumerate(params):
                if param.kind == "range":
                    w.put(f"clSetKernelArg({kname}, {i}, sizeof(cl_int), &{param.name});")
                elif param.kind == "scalar":
                    w.put(f"clSetKernelArg({kname}, {i}, sizeof(double), "
                          f"&h_{param.alloc.name});")
                elif param.kind == "local":
                    w.put(f"clSetKernelArg({kname}, {i}, {param.alloc.size_bytes}, NULL);")
                elif param.kind == "partials":
                    w.put(f"clSetKernelArg({kname}, {i}, sizeof(cl_mem), "
                          f"&part_{kname}_d{d});")
                else:
                    w.put(f"clSetKernelArg({kname}, {i}, sizeof(cl_mem), "
                          f"&buf_{param.alloc.name});")
            w.put(f"err = clEnqueueNDRangeKernel(queues[{d}], {kname}, 1, NULL, "
                  f"&global_size, &local_size, 0, NULL, NULL);")
            w.put(f'CHECK(err, "enqueue {kname}");')
            w.close()
        for launch in step.launches:
            w.put(f"clFinish(queues[{launch.device_index}]);")
        if step.op == "dot_partial":
            s_alloc = index.host_alloc(f"{step.task_path}.s")
            w.put(f"h_{s_alloc.name} = 0.0;")
            for launch in step.launches:
                d = launch.device_index
                groups = _group_count(launch)
                w.put(f"err = clEnqueueReadBuffer(queues[{d}], part_{kname}_d{d}, CL_TRUE, "
                      f"0, {groups} * sizeof(double), ph_{kname}_d{d}, 0, NULL, NULL);")
                w.put(f'CHECK(err, "read partials {kname}");')
                w.put(f"for (int g = 0; g < {groups}; ++g) "
                      f"h_{s_alloc.name} += ph_{kname}_d{d}[g];")

    def scalar_name(task_path: str, port: str) -> str:
        alloc = index.host_alloc(f"{task_path}.{port}")
        return f"h_{alloc.name}"

    def emit_host_op(step: HostOp):
        if step.op == "div":
            w.put(f"{scalar_name(step.task_path, 'q')} = "
                  f"{scalar_name(step.task_path, 'num')} / "
                  f"{scalar_name(step.task_path, 'den')};")
        elif step.op == "neg":
            w.put(f"{scalar_name(step.task_path, 'z')} = "
                  f"-{scalar_name(step.task_path, 'a')};")
        elif step.op == "rel_residual":
            w.put(f"{scalar_name(step.task_path, 'z')} = "
                  f"sqrt({scalar_name(step.task_path, 'num')}) / "
                  f"sqrt({scalar_name(step.task_path, 'den')});")
        else:
            raise UnknownIntrinsic(step.task_path, step.op)

    def emit_steps(steps):
        for step in steps:
            if isinstance(step, DeviceStep):
                emit_device_step(step)
            elif isinstance(step, HostOp):
                emit_host_op(step)
            elif isinstance(step, LoopStep):
                relres = index.host_alloc(step.relres_port)
                w.put(f"/* loop {step.task_path}: until h_{relres.name} <= "
                      f"{_float_literal(step.tolerance)} */")
                w.put("converged = 0;")
                w.open(f"while (iters < {step.max_iterations}) {{")
                emit_steps(step.body)
                w.put("++iters;")
                w.put(f"if (h_{relres.name} <= {_float_literal(step.tolerance)}) "
                      "{ converged = 1; break; }")
                w.close()

    emit_steps(schedule.steps)
    w.put("")
    w.put("/* read back and store outputs */")
    final_relres = None
    for step in schedule.steps:
        if isinstance(step, LoopStep):
            final_relres = index.host_alloc(step.relres_port)
    for port in root_outputs:
        device = index.device_alloc(port.name)
        if device is None:
            continue
        _, alloc = device
        n = alloc.dim_allocation.total
        ctype = _C_TYPES[alloc.type_allocation]
        w.put(f"{ctype}* out_{alloc.name} = ({ctype}*)malloc({alloc.size_bytes});")
        w.put(f"err = clEnqueueReadBuffer(queues[0], buf_{alloc.name}, CL_TRUE, 0, "
              f"{alloc.size_bytes}, out_{alloc.name}, 0, NULL, NULL);")
        w.put(f'CHECK(err, "read {alloc.name}");')
        w.put(f'store_doubles("{name}_{port.name}_out.txt", out_{alloc.name}, {n});')
    relres_expr = f"h_{final_relres.name}" if final_relres is not None else "0.0"
    w.put(f'printf("iters=%d relres=%.17g converged=%s\\n", iters, {relres_expr}, '
          'converged ? "true" : "false");')
    w.put("")
    for _, alloc in device_allocs:
        w.put(f"clReleaseMemObject(buf_{alloc.name});")
    for kname, dev, groups in partials:
        w.put(f"clReleaseMemObject(part_{kname}_d{dev});")
        w.put(f"free(ph_{kname}_d{dev});")
    for step in device_tasks:
        w.put(f"clReleaseKernel({kernel_name(step.task_path)});")
    w.put("clReleaseProgram(program);")
    w.put("free(source);")
    w.put("for (int d = 0; d < DEVICE_COUNT; ++d) clReleaseCommandQueue(queues[d]);")
    w.put("clReleaseContext(context);")
    w.put("return converged ? 0 : 3;")
    w.depth = 0
    w.put("}")
    return GeneratedUnit(file_name=f"{name}_host.c", contents="\n".join(w.lines) + "\n")
