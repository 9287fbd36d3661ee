"""Device control: enumeration, power caps, and instantaneous telemetry.

Two interchangeable backends sit behind one small surface:

* ``SimBackend`` — an analytical GPU model for desk-scale runs and tests.
  Steady workload power follows ``P = p_idle + k * f**alpha`` with
  ``alpha > 1`` (power grows faster than linear with clock), throughput is
  proportional to the compute clock up to a saturation knee, and the memory
  clock is a two-level step function of the cap.  Devices that do not
  honour low caps are modelled with an enforcement floor: caps below the
  floor are accepted and read back verbatim, but the simulated device keeps
  drawing the floor power — the violation only becomes visible in measured
  telemetry, exactly as on real hardware.
* ``CommandBackend`` — shells out to operator-supplied command templates
  (wrapping ``nvidia-smi``, ``amd-smi``, ...) so no vendor library ever
  enters the core.

``set_power_cap`` never silently clamps and never validates enforcement:
it reports the backend's read-back value and leaves the comparison to the
caller.  Enforcement is judged later from measured power (see
``powerbench.telemetry.check_cap_enforcement``).
"""

from __future__ import annotations

import json
import shlex
import subprocess
import threading
import time
from dataclasses import dataclass

from .errors import (
    BackendRejection,
    BackendUnavailable,
    CapRangeError,
    ConfigError,
    ReadFailure,
)

VENDORS = ("nvidia-like", "amd-like", "simulated")


@dataclass(frozen=True)
class DeviceDescriptor:
    """Static identity and limits of one GPU."""

    device_id: str
    vendor: str
    name: str
    tdp_w: float
    cap_min_w: float
    cap_max_w: float
    memory_capacity_bytes: int
    gpus_per_node: int

    def __post_init__(self):
        if self.vendor not in VENDORS:
            raise ConfigError(f"unknown vendor {self.vendor!r}")
        if not self.cap_min_w > 0:
            raise ConfigError("cap_min_w must be > 0")
        if self.cap_min_w > self.cap_max_w:
            raise ConfigError("cap_min_w must not exceed cap_max_w")
        if self.gpus_per_node < 1:
            raise ConfigError("gpus_per_node must be >= 1")


@dataclass(frozen=True)
class DeviceProfile:
    """Parameters of the analytical simulator.

    ``p_idle_w + k * f_max_mhz**alpha`` is the profile's maximum workload
    power draw.  ``enforce_floor_w = 0`` means caps are always honoured.
    """

    p_idle_w: float
    alpha: float
    k: float
    f_min_mhz: float
    f_max_mhz: float
    f_knee_mhz: float
    t_max_units_per_s: float
    enforce_floor_w: float = 0.0
    mem_clock_low_mhz: float = 0.0
    mem_clock_high_mhz: float = 0.0
    mem_step_w: float = 0.0

    def __post_init__(self):
        if not self.alpha > 1.0:
            raise ConfigError("alpha must be > 1 (superlinear power growth)")
        if not self.f_min_mhz < self.f_max_mhz:
            raise ConfigError("f_min_mhz must be below f_max_mhz")
        if self.p_idle_w < 0 or self.k <= 0:
            raise ConfigError("p_idle_w must be >= 0 and k > 0")

    @property
    def max_power_w(self) -> float:
        return self.p_idle_w + self.k * self.f_max_mhz**self.alpha

    @property
    def min_active_power_w(self) -> float:
        return self.p_idle_w + self.k * self.f_min_mhz**self.alpha


@dataclass(frozen=True)
class OperatingPoint:
    """Steady state of a simulated device under one power target."""

    power_w: float
    sm_clock_mhz: float
    mem_clock_mhz: float
    throughput_units_per_s: float


@dataclass(frozen=True)
class AppliedCap:
    requested_w: float
    reported_w: float


@dataclass(frozen=True)
class RawSample:
    """One instantaneous backend reading (pre-timestamping)."""

    power_w: float
    sm_clock_mhz: float
    mem_clock_mhz: float
    memory_used_bytes: int


def simulate_operating_point(profile: DeviceProfile, cap_w: float) -> OperatingPoint:
    """Solve the profile model for the steady state under ``cap_w``.

    The effective power target is the cap raised to the enforcement floor
    and clamped into the feasible band ``[P(f_min), P(f_max)]``; the clock
    follows from inverting ``P = p_idle + k * f**alpha`` and the reported
    power is recomputed from the clamped clock.
    """
    if cap_w <= 0:
        raise CapRangeError(f"cap must be positive, got {cap_w}")
    target = max(cap_w, profile.enforce_floor_w)
    target = min(max(target, profile.min_active_power_w), profile.max_power_w)
    f = ((target - profile.p_idle_w) / profile.k) ** (1.0 / profile.alpha)
    f = min(max(f, profile.f_min_mhz), profile.f_max_mhz)
    if profile.f_knee_mhz <= profile.f_max_mhz:
        throughput = profile.t_max_units_per_s * min(f, profile.f_knee_mhz) / profile.f_knee_mhz
    else:
        throughput = profile.t_max_units_per_s * f / profile.f_max_mhz
    mem_clock = profile.mem_clock_low_mhz if cap_w < profile.mem_step_w else profile.mem_clock_high_mhz
    power = profile.p_idle_w + profile.k * f**profile.alpha
    return OperatingPoint(
        power_w=power,
        sm_clock_mhz=f,
        mem_clock_mhz=mem_clock,
        throughput_units_per_s=throughput,
    )


# Default simulated catalog.  TDP, cap maxima, GPUs per node, and memory
# capacities follow the published specs of the three devices the harness
# was designed around; the remaining constants are model plumbing chosen
# so the h100-like node-efficiency optimum sits at 290 W continuous
# (discrete sweep peak 300 W) and the h200-like optimum near 350 W
# (discrete peak 400 W).
DEFAULT_PROFILES: dict[str, dict] = {
    "h100-like": {
        "vendor": "nvidia-like",
        "name": "H100-like (simulated)",
        "tdp_w": 700.0,
        "cap_min_w": 100.0,
        "cap_max_w": 700.0,
        "memory_capacity_bytes": 94_000_000_000,
        "gpus_per_node": 4,
        "profile": {
            "p_idle_w": 80.0,
            "alpha": 1.5,
            "k": 620.0 / 1980.0**1.5,
            "f_min_mhz": 345.0,
            "f_max_mhz": 1980.0,
            "f_knee_mhz": 1980.0,
            "t_max_units_per_s": 1500.0,
            "enforce_floor_w": 0.0,
            "mem_clock_low_mhz": 2619.0,
            "mem_clock_high_mhz": 2619.0,
            "mem_step_w": 0.0,
        },
    },
    "h200-like": {
        "vendor": "nvidia-like",
        "name": "H200-like (simulated)",
        "tdp_w": 700.0,
        "cap_min_w": 100.0,
        "cap_max_w": 700.0,
        "memory_capacity_bytes": 141_000_000_000,
        "gpus_per_node": 4,
        "profile": {
            "p_idle_w": 100.0,
            "alpha": 1.5,
            "k": 600.0 / 2400.0**1.5,
            "f_min_mhz": 345.0,
            "f_max_mhz": 2400.0,
            "f_knee_mhz": 2400.0,
            "t_max_units_per_s": 1700.0,
            "enforce_floor_w": 0.0,
            "mem_clock_low_mhz": 3201.0,
            "mem_clock_high_mhz": 3201.0,
            "mem_step_w": 0.0,
        },
    },
    "mi300x-like": {
        "vendor": "amd-like",
        "name": "MI300X-like (simulated)",
        "tdp_w": 750.0,
        "cap_min_w": 100.0,
        "cap_max_w": 750.0,
        "memory_capacity_bytes": 192_000_000_000,
        "gpus_per_node": 8,
        "profile": {
            "p_idle_w": 120.0,
            "alpha": 1.5,
            "k": 630.0 / 2100.0**1.5,
            "f_min_mhz": 500.0,
            "f_max_mhz": 2100.0,
            "f_knee_mhz": 2100.0,
            "t_max_units_per_s": 1400.0,
            "enforce_floor_w": 400.0,
            "mem_clock_low_mhz": 900.0,
            "mem_clock_high_mhz": 1300.0,
            "mem_step_w": 500.0,
        },
    },
}


@dataclass
class SimDeviceEntry:
    descriptor: DeviceDescriptor
    profile: DeviceProfile


def _profile_from_dict(d: dict) -> DeviceProfile:
    try:
        return DeviceProfile(**d)
    except TypeError as exc:
        raise ConfigError(f"bad profile entry: {exc}") from exc


def _descriptor_from_entry(device_id: str, entry: dict, vendor_override: str | None = None) -> DeviceDescriptor:
    return DeviceDescriptor(
        device_id=device_id,
        vendor=vendor_override or entry["vendor"],
        name=entry["name"],
        tdp_w=float(entry["tdp_w"]),
        cap_min_w=float(entry["cap_min_w"]),
        cap_max_w=float(entry["cap_max_w"]),
        memory_capacity_bytes=int(entry["memory_capacity_bytes"]),
        gpus_per_node=int(entry["gpus_per_node"]),
    )


def build_sim_catalog(profile_name: str, count: int | None = None, prefix: str = "sim") -> dict[str, SimDeviceEntry]:
    """Instantiate ``count`` devices of a named default profile.

    ``count=None`` uses the profile's ``gpus_per_node``.
    """
    if profile_name not in DEFAULT_PROFILES:
        raise ConfigError(f"unknown profile {profile_name!r} (have: {sorted(DEFAULT_PROFILES)})")
    entry = DEFAULT_PROFILES[profile_name]
    n = entry["gpus_per_node"] if count is None else count
    profile = _profile_from_dict(entry["profile"])
    catalog = {}
    for i in range(n):
        device_id = f"{prefix}{i}"
        catalog[device_id] = SimDeviceEntry(
            descriptor=_descriptor_from_entry(device_id, entry),
            profile=profile,
        )
    return catalog


def load_sim_catalog(path: str) -> dict[str, SimDeviceEntry]:
    """Load a profile-catalog file.

    Schema: ``{"devices": [{"device_id": ..., "profile": <name>}],
    "profiles": {<name>: {descriptor fields..., "profile": {...}}}}``.
    Profiles may reference the built-in names; local definitions win.
    """
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise BackendUnavailable(f"profile catalog missing: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"profile catalog {path} is not valid JSON: {exc}") from exc
    profiles = dict(DEFAULT_PROFILES)
    profiles.update(raw.get("profiles", {}))
    catalog: dict[str, SimDeviceEntry] = {}
    for dev in raw.get("devices", []):
        pname = dev.get("profile")
        if pname not in profiles:
            raise ConfigError(f"device {dev!r} references unknown profile {pname!r}")
        entry = profiles[pname]
        device_id = str(dev["device_id"])
        catalog[device_id] = SimDeviceEntry(
            descriptor=_descriptor_from_entry(device_id, entry),
            profile=_profile_from_dict(entry["profile"]),
        )
    return catalog


class SimBackend:
    """Pure analytical backend; reentrant, no external state.

    ``workload_active`` toggles between idle draw (``p_idle``) and the
    steady operating point for the currently applied cap.
    """

    def __init__(self, catalog: dict[str, SimDeviceEntry]):
        self._catalog = dict(catalog)
        self._caps: dict[str, float] = {
            dev_id: entry.descriptor.cap_max_w for dev_id, entry in catalog.items()
        }
        self._active: dict[str, bool] = {dev_id: False for dev_id in catalog}
        self._lock = threading.Lock()

    def enumerate_devices(self) -> list[DeviceDescriptor]:
        return [self._catalog[d].descriptor for d in sorted(self._catalog)]

    def _entry(self, device_id: str) -> SimDeviceEntry:
        try:
            return self._catalog[device_id]
        except KeyError:
            raise BackendUnavailable(f"unknown device {device_id!r}") from None

    def profile(self, device_id: str) -> DeviceProfile:
        return self._entry(device_id).profile

    def set_power_cap(self, device_id: str, cap_w: float) -> AppliedCap:
        entry = self._entry(device_id)
        desc = entry.descriptor
        if not desc.cap_min_w <= cap_w <= desc.cap_max_w:
            raise CapRangeError(
                f"cap {cap_w} W outside [{desc.cap_min_w}, {desc.cap_max_w}] for {device_id}"
            )
        with self._lock:
            self._caps[device_id] = float(cap_w)
        # Read-back reports the accepted value even when an enforcement
        # floor will override it; the lie surfaces in telemetry.
        return AppliedCap(requested_w=float(cap_w), reported_w=float(cap_w))

    def get_power_cap(self, device_id: str) -> float:
        self._entry(device_id)
        with self._lock:
            return self._caps[device_id]

    def set_workload_active(self, device_id: str, active: bool) -> None:
        self._entry(device_id)
        with self._lock:
            self._active[device_id] = active

    def read_raw_sample(self, device_id: str) -> RawSample:
        entry = self._entry(device_id)
        with self._lock:
            cap = self._caps[device_id]
            active = self._active[device_id]
        prof = entry.profile
        if not active:
            return RawSample(
                power_w=prof.p_idle_w,
                sm_clock_mhz=prof.f_min_mhz,
                mem_clock_mhz=prof.mem_clock_low_mhz,
                memory_used_bytes=0,
            )
        point = simulate_operating_point(prof, cap)
        return RawSample(
            power_w=point.power_w,
            sm_clock_mhz=point.sm_clock_mhz,
            mem_clock_mhz=point.mem_clock_mhz,
            memory_used_bytes=int(entry.descriptor.memory_capacity_bytes * 0.8),
        )


class CommandBackend:
    """Backend driven by operator-supplied command templates.

    Templates are shell-free argument vectors obtained by ``shlex`` after
    substituting ``{device}`` and ``{watts}``.  Expected outputs:

    * ``list_devices``: one CSV line per device:
      ``device_id,name,tdp_w,cap_min_w,cap_max_w,memory_bytes,gpus_per_node``
    * ``get_cap``: a single number (watts)
    * ``query``: one CSV line:
      ``power_w,sm_clock_mhz,mem_clock_mhz,memory_used_bytes``
    """

    def __init__(self, commands: dict[str, str], vendor: str = "nvidia-like", timeout_s: float = 10.0):
        for key in ("list_devices", "set_cap", "get_cap", "query"):
            if key not in commands:
                raise ConfigError(f"command backend config missing template {key!r}")
        self._commands = dict(commands)
        self._vendor = vendor
        self._timeout_s = timeout_s
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()
        self._descriptors: dict[str, DeviceDescriptor] = {}

    def _device_lock(self, device_id: str) -> threading.Lock:
        with self._locks_guard:
            return self._locks.setdefault(device_id, threading.Lock())

    def _run(self, template_key: str, **subst) -> str:
        template = self._commands[template_key]
        argv = shlex.split(template.format(**subst))
        try:
            proc = subprocess.run(
                argv, capture_output=True, text=True, timeout=self._timeout_s
            )
        except FileNotFoundError as exc:
            raise BackendUnavailable(f"{template_key} command not found: {argv[0]}") from exc
        except subprocess.TimeoutExpired as exc:
            raise BackendUnavailable(f"{template_key} command timed out") from exc
        if proc.returncode != 0:
            raise BackendRejection(
                f"{template_key} command exited {proc.returncode}: {proc.stderr.strip()}"
            )
        return proc.stdout

    def enumerate_devices(self) -> list[DeviceDescriptor]:
        try:
            out = self._run("list_devices")
        except BackendRejection as exc:
            raise BackendUnavailable(str(exc)) from exc
        descriptors = []
        for line in out.splitlines():
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 7:
                raise BackendUnavailable(f"malformed device line: {line!r}")
            try:
                desc = DeviceDescriptor(
                    device_id=parts[0],
                    vendor=self._vendor,
                    name=parts[1],
                    tdp_w=float(parts[2]),
                    cap_min_w=float(parts[3]),
                    cap_max_w=float(parts[4]),
                    memory_capacity_bytes=int(parts[5]),
                    gpus_per_node=int(parts[6]),
                )
            except ValueError as exc:
                raise BackendUnavailable(f"malformed device line: {line!r}") from exc
            descriptors.append(desc)
        descriptors.sort(key=lambda d: d.device_id)
        self._descriptors = {d.device_id: d for d in descriptors}
        return descriptors

    def set_power_cap(self, device_id: str, cap_w: float) -> AppliedCap:
        desc = self._descriptors.get(device_id)
        if desc is not None and not desc.cap_min_w <= cap_w <= desc.cap_max_w:
            raise CapRangeError(
                f"cap {cap_w} W outside [{desc.cap_min_w}, {desc.cap_max_w}] for {device_id}"
            )
        with self._device_lock(device_id):
            self._run("set_cap", device=device_id, watts=int(cap_w))
            reported = self.get_power_cap(device_id)
        return AppliedCap(requested_w=float(cap_w), reported_w=reported)

    def get_power_cap(self, device_id: str) -> float:
        out = self._run("get_cap", device=device_id).strip()
        try:
            return float(out.splitlines()[0])
        except (ValueError, IndexError) as exc:
            raise ReadFailure(f"get_cap returned malformed output: {out!r}") from exc

    def set_workload_active(self, device_id: str, active: bool) -> None:
        # Real devices observe load on their own; nothing to do.
        return None

    def read_raw_sample(self, device_id: str) -> RawSample:
        with self._device_lock(device_id):
            out = self._run("query", device=device_id).strip()
        parts = out.split(",")
        if len(parts) != 4:
            raise ReadFailure(f"query returned malformed output: {out!r}")
        try:
            return RawSample(
                power_w=float(parts[0]),
                sm_clock_mhz=float(parts[1]),
                mem_clock_mhz=float(parts[2]),
                memory_used_bytes=int(float(parts[3])),
            )
        except ValueError as exc:
            raise ReadFailure(f"query returned malformed output: {out!r}") from exc


def make_backend(config: dict):
    """Construct a backend from a backend-config mapping.

    ``{"backend": "sim", "catalog": <path>|null, "profile": <name>,
    "count": <n>}`` or ``{"backend": "command", "vendor": ...,
    "commands": {...}}``.
    """
    kind = config.get("backend")
    if kind == "sim":
        if config.get("catalog"):
            catalog = load_sim_catalog(config["catalog"])
        else:
            catalog = build_sim_catalog(
                config.get("profile", "h100-like"), config.get("count")
            )
        return SimBackend(catalog)
    if kind == "command":
        return CommandBackend(
            config.get("commands", {}), vendor=config.get("vendor", "nvidia-like")
        )
    raise ConfigError(f"unknown backend kind {kind!r}")


def enumerate_devices(backend) -> list[DeviceDescriptor]:
    """Enumerate visible devices, deterministically ordered by id."""
    return backend.enumerate_devices()


def read_telemetry_sample(backend, device_id: str):
    """One timestamped instantaneous reading; see powerbench.telemetry."""
    from .telemetry import PowerSample

    t_ns = time.monotonic_ns()
    raw = backend.read_raw_sample(device_id)
    return PowerSample(
        t_ns=t_ns,
        device_id=device_id,
        power_w=raw.power_w,
        sm_clock_mhz=raw.sm_clock_mhz,
        mem_clock_mhz=raw.mem_clock_mhz,
        memory_used_bytes=raw.memory_used_bytes,
        valid=True,
    )
