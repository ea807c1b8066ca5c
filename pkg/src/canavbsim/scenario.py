"""Scenario configuration, topology construction, and experiment arms.

Config files are sectioned key=value text.  A ``[section]`` header prefixes
the keys that follow; fully dotted keys work without a header, so
``traffic.jammer.enabled=true`` on its own line is equivalent to
``enabled=true`` under ``[traffic.jammer]``.  Unknown keys are errors.
Durations accept ns/us/ms/s suffixes, rates accept bps/kbps/Mbps/Gbps.

The default (empty) configuration is the reference scenario: a 1-Mbps CAN
bus with one periodic sender and the gateway, a two-switch 100-Mbps
backbone to the listener, and a disabled jamming talker on switch 1.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from .canbus import STUFFING_MODELS, STUFFING_NONE, CAN_MAX_ID, CanBus
from .core import NS_PER_SEC, Event, RunStats, SimulationError, Simulator, stream_rng
from .ethernet import AVB_PCP, ETHERTYPE_CAN_TUNNEL, EgressPort, EthFrame, Switch
from .gateway import Gateway, GwConfig
from .metrics import LatencyRecord, LatencyRecorder, RunSummary, export_csv
from .traffic import JammingTalker, JammingTalkerCfg, Listener, PeriodicCanSender, PeriodicCanSenderCfg

ARMS = ("Eth_nature", "Eth_jam", "AVB_nature", "AVB_jam")


class ConfigError(SimulationError):
    pass


class ParseError(ConfigError):
    """Malformed config syntax; carries the offending line number."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class ValidationError(ConfigError):
    """A config value violates an invariant."""


_DURATION_UNITS = {"ns": 1, "us": 1_000, "ms": 1_000_000, "s": NS_PER_SEC}
_RATE_UNITS = {"bps": 1, "kbps": 1_000, "mbps": 1_000_000, "gbps": 1_000_000_000}


def _scaled_int(text: str, units: dict[str, int], what: str) -> int:
    raw = text.strip().lower().replace("µs", "us")
    mult = 1
    for suffix in sorted(units, key=len, reverse=True):
        if raw.endswith(suffix):
            raw, mult = raw[: -len(suffix)].strip(), units[suffix]
            break
    try:
        value = Fraction(raw) * mult
    except (ValueError, ZeroDivisionError):
        raise ValidationError(f"cannot parse {what} {text!r}") from None
    if value.denominator != 1:
        raise ValidationError(f"{what} {text!r} is not a whole number of base units")
    return int(value)


def parse_duration(text: str) -> int:
    """'3ms' -> 3_000_000 ns; bare integers are nanoseconds."""
    return _scaled_int(text, _DURATION_UNITS, "duration")


def parse_rate(text: str) -> int:
    """'100Mbps' -> 100_000_000 bits/s; bare integers are bits/s."""
    return _scaled_int(text, _RATE_UNITS, "rate")


def _parse_int(text: str) -> int:
    try:
        return int(text.strip(), 0)
    except ValueError:
        raise ValidationError(f"cannot parse integer {text!r}") from None


def _parse_optional_int(text: str) -> int | None:
    if text.strip().lower() in ("none", "unbounded"):
        return None
    return _parse_int(text)


def _parse_optional_rate(text: str) -> int | None:
    if text.strip().lower() in ("none", "unlimited"):
        return None
    return parse_rate(text)


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "yes", "on", "1"):
        return True
    if t in ("false", "no", "off", "0"):
        return False
    raise ValidationError(f"cannot parse boolean {text!r}")


def _parse_str(text: str) -> str:
    return text.strip()


# key -> (attribute path, converter).  Having one table keeps "unknown key"
# checking and documentation in a single place.
_CONFIG_KEYS = {
    "sim.seed": ("seed", _parse_int),
    "sim.duration": ("duration", parse_duration),
    "can.bitrate": ("can_bitrate", parse_rate),
    "can.stuffing_model": ("can_stuffing_model", _parse_str),
    "can.node_queue_cap": ("can_node_queue_cap", _parse_optional_int),
    "ethernet.rate": ("eth_rate", parse_rate),
    "switches.count": ("switch_count", _parse_int),
    "switches.forwarding_latency": ("forwarding_latency", parse_duration),
    "switches.idle_slope": ("idle_slope", parse_rate),
    "switches.avb_queue_cap": ("avb_queue_cap", _parse_optional_int),
    "switches.be_queue_cap": ("be_queue_cap", _parse_optional_int),
    "gateway.pack_period": ("gw_pack_period", parse_duration),
    "gateway.mtu_payload": ("gw_mtu_payload", _parse_int),
    "gateway.class_for_can": ("gw_class_for_can", _parse_int),
    "gateway.be_pcp": ("gw_be_pcp", _parse_int),
    "gateway.queue_cap": ("gw_queue_cap", _parse_optional_int),
    "traffic.sender.can_id": ("sender_can_id", _parse_int),
    "traffic.sender.dlc": ("sender_dlc", _parse_int),
    "traffic.sender.period": ("sender_period", parse_duration),
    "traffic.sender.start": ("sender_start", parse_duration),
    "traffic.sender.count_limit": ("sender_count_limit", _parse_optional_int),
    "traffic.jammer.enabled": ("jammer_enabled", _parse_bool),
    "traffic.jammer.frame_total_bytes": ("jammer_frame_total_bytes", _parse_int),
    "traffic.jammer.period_lo": ("jammer_period_lo", parse_duration),
    "traffic.jammer.period_hi": ("jammer_period_hi", parse_duration),
    "traffic.jammer.pcp": ("jammer_pcp", _parse_int),
    "traffic.jammer.attach_switch": ("jammer_attach_switch", _parse_int),
    "traffic.jammer.link_rate": ("jammer_link_rate", _parse_optional_rate),
    "output.dir": ("out_dir", _parse_str),
}


@dataclass
class ScenarioConfig:
    """Flat scenario parameters; defaults reproduce the reference scenario."""

    seed: int = 42
    duration: int = NS_PER_SEC
    can_bitrate: int = 1_000_000
    can_stuffing_model: str = STUFFING_NONE
    can_node_queue_cap: int | None = None
    eth_rate: int = 100_000_000
    switch_count: int = 2
    forwarding_latency: int = 5_000
    idle_slope: int = 20_000_000
    avb_queue_cap: int | None = None
    be_queue_cap: int | None = None
    gw_pack_period: int = 500_000
    gw_mtu_payload: int = 1500
    gw_class_for_can: int = AVB_PCP
    gw_be_pcp: int | None = None  # auto: 0, or 1 when CAN rides pcp 0
    gw_queue_cap: int | None = None
    sender_can_id: int = 0x100
    sender_dlc: int = 8
    sender_period: int = 3_000_000
    sender_start: int = 0
    sender_count_limit: int | None = None
    jammer_enabled: bool = False
    jammer_frame_total_bytes: int = 1470
    jammer_period_lo: int = 1_000
    jammer_period_hi: int = 25_000
    jammer_pcp: int = 0
    jammer_attach_switch: int = 1
    jammer_link_rate: int | None = None
    out_dir: str | None = None

    def resolved_be_pcp(self) -> int:
        if self.gw_be_pcp is not None:
            return self.gw_be_pcp
        return 1 if self.gw_class_for_can == 0 else 0

    def gateway_config(self) -> GwConfig:
        return GwConfig(
            pack_period=self.gw_pack_period,
            mtu_payload=self.gw_mtu_payload,
            class_for_can=self.gw_class_for_can,
            be_pcp=self.resolved_be_pcp(),
            queue_cap=self.gw_queue_cap,
        )

    def sender_config(self) -> PeriodicCanSenderCfg:
        return PeriodicCanSenderCfg(
            can_id=self.sender_can_id,
            dlc=self.sender_dlc,
            period=self.sender_period,
            start=self.sender_start,
            count_limit=self.sender_count_limit,
        )

    def jammer_config(self) -> JammingTalkerCfg:
        return JammingTalkerCfg(
            frame_total_bytes=self.jammer_frame_total_bytes,
            period_lo=self.jammer_period_lo,
            period_hi=self.jammer_period_hi,
            dst="listener",
            pcp=self.jammer_pcp,
            link_rate=self.jammer_link_rate,
        )


def arm_name(cfg: ScenarioConfig) -> str:
    kind = "AVB" if cfg.gw_class_for_can == AVB_PCP else "Eth"
    return f"{kind}_{'jam' if cfg.jammer_enabled else 'nature'}"


def arm_config(base: ScenarioConfig, arm: str) -> ScenarioConfig:
    """The suite arm variant: only jammer-enabled and CAN classification differ."""
    if arm not in ARMS:
        raise ValidationError(f"unknown arm {arm!r}; expected one of {ARMS}")
    kind, load = arm.split("_")
    return dataclasses.replace(
        base,
        gw_class_for_can=AVB_PCP if kind == "AVB" else 0,
        gw_be_pcp=None,
        jammer_enabled=(load == "jam"),
    )


def validate_config(cfg: ScenarioConfig) -> ScenarioConfig:
    """Check cross-field invariants; returns cfg for chaining."""

    def need(cond: bool, message: str):
        if not cond:
            raise ValidationError(message)

    need(cfg.duration > 0, "sim.duration must be positive")
    need(cfg.can_bitrate > 0, "can.bitrate must be positive")
    need(
        cfg.can_stuffing_model in STUFFING_MODELS,
        f"can.stuffing_model must be one of {STUFFING_MODELS}",
    )
    need(cfg.eth_rate > 0, "ethernet.rate must be positive")
    need(cfg.switch_count >= 1, "switches.count must be at least 1")
    need(cfg.forwarding_latency >= 0, "switches.forwarding_latency must be non-negative")
    need(
        0 < cfg.idle_slope < cfg.eth_rate,
        "switches.idle_slope must be positive and below the link rate",
    )
    need(0 <= cfg.gw_class_for_can <= 7, "gateway.class_for_can must be a pcp in 0..7")
    need(
        cfg.gw_be_pcp is None or 0 <= cfg.gw_be_pcp <= 7,
        "gateway.be_pcp must be a pcp in 0..7",
    )
    need(0 <= cfg.sender_can_id <= CAN_MAX_ID, "traffic.sender.can_id must fit 11 bits")
    need(0 <= cfg.jammer_pcp <= 7, "traffic.jammer.pcp must be a pcp in 0..7")
    need(
        1 <= cfg.jammer_attach_switch <= cfg.switch_count,
        "traffic.jammer.attach_switch must name an existing switch",
    )
    need(
        cfg.jammer_period_lo <= cfg.jammer_period_hi,
        "traffic.jammer.period_lo must not exceed period_hi",
    )
    need(
        cfg.jammer_link_rate is None or cfg.jammer_link_rate >= 2,
        "traffic.jammer.link_rate must be at least 2 bits/s",
    )
    # Sub-config constructors enforce their own invariants; surface those
    # as validation errors too.
    try:
        cfg.gateway_config()
        cfg.sender_config()
        cfg.jammer_config()
    except SimulationError as exc:
        raise ValidationError(str(exc)) from None
    return cfg


def parse_config(text: str) -> ScenarioConfig:
    """Parse sectioned key=value text into a validated ScenarioConfig."""
    cfg = ScenarioConfig()
    seen: dict[str, int] = {}
    section = ""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ParseError(lineno, f"unterminated section header {line!r}")
            section = line[1:-1].strip()
            if not section:
                raise ParseError(lineno, "empty section name")
            continue
        if "=" not in line:
            raise ParseError(lineno, f"expected key=value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ParseError(lineno, "missing key before '='")
        full_key = f"{section}.{key}" if section else key
        if full_key not in _CONFIG_KEYS:
            raise ValidationError(f"line {lineno}: unknown config key {full_key!r}")
        if full_key in seen:
            raise ValidationError(
                f"line {lineno}: {full_key!r} already set on line {seen[full_key]}"
            )
        seen[full_key] = lineno
        attr, convert = _CONFIG_KEYS[full_key]
        try:
            setattr(cfg, attr, convert(value))
        except ValidationError as exc:
            raise ValidationError(f"line {lineno}: {full_key}: {exc}") from None
    return validate_config(cfg)


def load_config(path: str | Path) -> ScenarioConfig:
    return parse_config(Path(path).read_text())


class Network:
    """A wired topology ready to run, with conservation accounting."""

    def __init__(self, cfg: ScenarioConfig, arm: str, sim: Simulator):
        self.cfg = cfg
        self.arm = arm
        self.sim = sim
        self.bus: CanBus | None = None
        self.sender: PeriodicCanSender | None = None
        self.gw: Gateway | None = None
        self.switches: list[Switch] = []
        self.talker: JammingTalker | None = None
        self.listener: Listener | None = None
        self.recorder: LatencyRecorder | None = None
        self.ports: list[EgressPort] = []
        self.records_in_dropped_frames = 0

    def start(self) -> None:
        self.gw.start()
        self.sender.start()
        if self.talker is not None:
            self.talker.start()

    def run(self) -> RunStats:
        self.start()
        return self.sim.run_until(self.cfg.duration)

    @staticmethod
    def _records_in(frame: EthFrame | None) -> int:
        if frame is None or frame.ethertype != ETHERTYPE_CAN_TUNNEL:
            return 0
        return int.from_bytes(frame.payload[:2], "little")

    def messages_in_flight(self) -> int:
        """CAN messages created but not yet delivered, wherever they sit."""
        total = self.bus.queued_messages() + len(self.gw.fifo)
        for port in self.ports:
            for frame in list(port.queues.avb_q) + list(port.queues.be_q):
                total += self._records_in(frame)
            total += self._records_in(port.in_service())
        for sw in self.switches:
            for frame in sw.pending:
                total += self._records_in(frame)
        return total

    def messages_dropped(self) -> int:
        return (
            self.gw.overflow_drops
            + sum(self.bus.overflows.values())
            + self.records_in_dropped_frames
        )

    def account(self) -> dict[str, int]:
        return {
            "created": self.sender.created,
            "delivered": self.listener.records_received,
            "in_flight": self.messages_in_flight(),
            "dropped": self.messages_dropped(),
        }

    def port_accounting(self) -> dict[str, dict[str, int]]:
        return {port.name: port.accounting() for port in self.ports}

    def drops(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for port in self.ports:
            if port.queues.dropped:
                out[port.name] = port.queues.dropped
        for sw in self.switches:
            if sw.unknown_dst_drops:
                out[f"{sw.name}:unknown_dst"] = sw.unknown_dst_drops
        if self.gw.overflow_drops:
            out["gw:fifo"] = self.gw.overflow_drops
        for node, n in self.bus.overflows.items():
            if n:
                out[f"canbus:{node}"] = n
        return out


def build_network(
    cfg: ScenarioConfig,
    arm: str | None = None,
    trace=None,
    depth_trace=None,
) -> Network:
    """Construct the chain topology: CAN bus -> gw -> sw1..swN -> listener,
    with the jamming talker hanging off its configured switch."""
    validate_config(cfg)
    label = arm if arm is not None else arm_name(cfg)
    sim = Simulator(trace=trace)
    net = Network(cfg, label, sim)

    net.recorder = LatencyRecorder()
    net.listener = Listener("listener", net.recorder, arm=label)

    net.bus = CanBus(
        sim,
        "canbus",
        bitrate=cfg.can_bitrate,
        stuffing_model=cfg.can_stuffing_model,
        node_queue_cap=cfg.can_node_queue_cap,
    )
    net.sender = PeriodicCanSender(sim, "sender", cfg.sender_config(), net.bus)
    net.gw = Gateway(sim, "gw", cfg.gateway_config(), dst="listener")
    net.bus.attach("gw", net.gw.on_can_received)

    net.switches = [
        Switch(sim, f"sw{i}", cfg.forwarding_latency) for i in range(1, cfg.switch_count + 1)
    ]

    def new_port(name: str, peer) -> EgressPort:
        port = EgressPort(
            sim,
            name,
            rate=cfg.eth_rate,
            idle_slope=cfg.idle_slope,
            peer=peer,
            avb_cap=cfg.avb_queue_cap,
            be_cap=cfg.be_queue_cap,
            depth_trace=depth_trace,
        )
        port.on_drop = net_count_dropped_records
        net.ports.append(port)
        return port

    def net_count_dropped_records(frame: EthFrame) -> None:
        net.records_in_dropped_frames += Network._records_in(frame)

    # Gateway NIC toward the first switch.
    net.gw.eth_port = new_port("port:gw->sw1", net.switches[0])

    # Full-duplex chain between the switches and on to the listener.
    chain = [net.gw] + net.switches + [net.listener]
    names = ["gw"] + [sw.name for sw in net.switches] + ["listener"]
    for i, sw in enumerate(net.switches, start=1):
        left_obj, left_name = chain[i - 1], names[i - 1]
        right_obj, right_name = chain[i + 1], names[i + 1]
        left_port = new_port(f"port:{sw.name}->{left_name}", left_obj)
        right_port = new_port(f"port:{sw.name}->{right_name}", right_obj)
        sw.add_port(left_port)
        sw.add_port(right_port)
        # Chain routing: the listener lives to the right, the gateway to
        # the left of every switch.
        sw.set_route("listener", right_port.name)
        sw.set_route("gw", left_port.name)

    if cfg.jammer_enabled:
        attach = net.switches[cfg.jammer_attach_switch - 1]
        rng = stream_rng(cfg.seed, "talker")
        jcfg = cfg.jammer_config()
        if jcfg.link_rate is not None:
            talker_port = EgressPort(
                sim,
                f"port:talker->{attach.name}",
                rate=jcfg.link_rate,
                # The talker only emits best-effort frames; clamp the slope
                # so a slow access link still has a valid shaper config.
                idle_slope=min(cfg.idle_slope, jcfg.link_rate - 1),
                peer=attach,
                depth_trace=depth_trace,
            )
            talker_port.on_drop = net_count_dropped_records
            net.ports.append(talker_port)
            net.talker = JammingTalker(sim, "talker", jcfg, rng, talker_port)
        else:
            net.talker = JammingTalker(sim, "talker", jcfg, rng, attach)

    return net


@dataclass
class ScenarioResult:
    arm: str
    records: list[LatencyRecord]
    summary: RunSummary
    stats: RunStats
    network: Network


def run_scenario(
    cfg: ScenarioConfig,
    arm: str | None = None,
    trace_path: str | Path | None = None,
    depth_trace_path: str | Path | None = None,
) -> ScenarioResult:
    """Build, run to cfg.duration, and summarize one scenario."""
    trace_file = open(trace_path, "w") if trace_path else None
    depth_file = open(depth_trace_path, "w") if depth_trace_path else None
    try:
        trace = None
        if trace_file:
            trace_file.write("time_ns,seq,target,kind\n")

            def trace(ev: Event) -> None:
                trace_file.write(f"{ev.fire_at},{ev.seq},{ev.target},{ev.kind}\n")

        depth_trace = None
        if depth_file:
            depth_file.write("time_ns,port,avb_depth,be_depth,credit\n")

            def depth_trace(now: int, port: str, avb: int, be: int, credit: int) -> None:
                depth_file.write(f"{now},{port},{avb},{be},{credit}\n")

        net = build_network(cfg, arm=arm, trace=trace, depth_trace=depth_trace)
        stats = net.run()
    finally:
        if trace_file:
            trace_file.close()
        if depth_file:
            depth_file.close()
    summary = net.recorder.summarize(jam_frames=net.listener.jam_frames, drops=net.drops())
    return ScenarioResult(net.arm, list(net.recorder.records), summary, stats, net)


@dataclass
class SuiteResult:
    results: dict[str, ScenarioResult]
    csv_paths: dict[str, Path]
    table: str


def comparison_table(results: dict[str, ScenarioResult]) -> str:
    lines = [f"{'arm':<12} {'count':>6} {'max_ms':>10} {'p99_ms':>10} {'jam_frames':>10}"]
    for arm in ARMS:
        s = results[arm].summary
        max_ms = f"{s.max / 1e6:.3f}" if s.count else "-"
        p99_ms = f"{s.p99 / 1e6:.3f}" if s.count else "-"
        lines.append(f"{arm:<12} {s.count:>6} {max_ms:>10} {p99_ms:>10} {s.jam_frames:>10}")
    return "\n".join(lines)


def run_experiment_suite(
    base: ScenarioConfig,
    out_dir: str | Path,
) -> SuiteResult:
    """Run the four arms with one shared seed and export fig3_<arm>.csv each.

    Arms differ only in jammer-enabled and CAN-frame classification.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results: dict[str, ScenarioResult] = {}
    csv_paths: dict[str, Path] = {}
    for arm in ARMS:
        result = run_scenario(arm_config(base, arm), arm=arm)
        path = out / f"fig3_{arm}.csv"
        export_csv(result.records, path)
        results[arm] = result
        csv_paths[arm] = path
    table = comparison_table(results)
    (out / "comparison.txt").write_text(table + "\n")
    return SuiteResult(results, csv_paths, table)
