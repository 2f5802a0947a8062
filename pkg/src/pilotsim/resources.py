"""Cluster topology, pilot acquisition, and slot-level occupancy bookkeeping.

All times inside a pilot are integer microseconds on a single monotonically
increasing clock; both the simulated and the real backend share it (the real
backend maps wall clock onto it).
"""

from dataclasses import dataclass, field

FREE = None

US_PER_S = 1_000_000


def us(seconds):
    """Convert seconds (float) to integer microseconds."""
    return int(round(seconds * US_PER_S))


def secs(micros):
    return micros / US_PER_S


class SlotError(Exception):
    """Occupancy conflict or ownership violation: signals a scheduler bug."""


@dataclass(frozen=True)
class NodeSpec:
    node_id: int
    cpu_cores: int
    gpus: int = 0
    usable_cpu_cores: int = None  # defaults to cpu_cores

    def __post_init__(self):
        if self.usable_cpu_cores is None:
            object.__setattr__(self, 'usable_cpu_cores', self.cpu_cores)
        if self.cpu_cores < 0 or self.gpus < 0:
            raise ValueError('core/gpu counts must be >= 0')
        if not 0 <= self.usable_cpu_cores <= self.cpu_cores:
            raise ValueError('usable_cpu_cores must be within [0, cpu_cores]')


# Schedulable shapes of the platforms the framework was characterized on.
# Summit exposes 42 schedulable cores per node: the hardware has 2 x 22, but
# two cores per socket are reserved for system use.  Frontera caps usable
# cores at 34 of 56 because of filesystem contention.
NODE_PRESETS = {
    'summit-node':   dict(cpu_cores=42, gpus=6),
    'frontera-node': dict(cpu_cores=56, gpus=0, usable_cpu_cores=34),
    'lassen-node':   dict(cpu_cores=44, gpus=4),
}


@dataclass(frozen=True)
class ResourceSpec:
    """A homogeneous set of nodes; heterogeneous clusters are a non-goal."""
    nodes: tuple
    name: str = 'cluster'

    def __post_init__(self):
        if not self.nodes:
            raise ValueError('resource spec needs at least one node')
        first = self.nodes[0]
        for n in self.nodes:
            if (n.cpu_cores, n.gpus, n.usable_cpu_cores) != \
                    (first.cpu_cores, first.gpus, first.usable_cpu_cores):
                raise ValueError('nodes within one pilot must be homogeneous')

    @classmethod
    def from_preset(cls, preset, n_nodes, name=None):
        if preset not in NODE_PRESETS:
            raise KeyError('unknown node preset: %s' % preset)
        shape = NODE_PRESETS[preset]
        nodes = tuple(NodeSpec(node_id=i, **shape) for i in range(n_nodes))
        return cls(nodes=nodes, name=name or preset)

    @property
    def node_type(self):
        return self.nodes[0]

    @property
    def total_usable_cores(self):
        return sum(n.usable_cpu_cores for n in self.nodes)

    @property
    def total_gpus(self):
        return sum(n.gpus for n in self.nodes)


@dataclass(frozen=True)
class PilotDescription:
    resource: ResourceSpec
    walltime: float                  # seconds
    startup_latency: float = 0.0     # seconds
    partition_plan: object = None    # executors.PartitionPlan, optional

    def __post_init__(self):
        if self.walltime <= 0:
            raise ValueError('walltime must be > 0')
        if self.startup_latency < 0:
            raise ValueError('startup_latency must be >= 0')


@dataclass(frozen=True)
class Placement:
    """Slot assignment of one task: per-node core id and GPU id lists."""
    task_id: str
    node_slots: tuple  # tuple of (node_id, core_ids tuple, gpu_ids tuple)

    def __post_init__(self):
        seen = set()
        for node_id, cores, gpus in self.node_slots:
            for c in cores:
                key = (node_id, 'c', c)
                if key in seen:
                    raise ValueError('core %d on node %d listed twice' % (c, node_id))
                seen.add(key)
            for g in gpus:
                key = (node_id, 'g', g)
                if key in seen:
                    raise ValueError('gpu %d on node %d listed twice' % (g, node_id))
                seen.add(key)

    @property
    def n_cores(self):
        return sum(len(cores) for _, cores, _ in self.node_slots)

    @property
    def n_gpus(self):
        return sum(len(gpus) for _, _, gpus in self.node_slots)

    @property
    def node_ids(self):
        return [node_id for node_id, _, _ in self.node_slots]

    def to_json(self):
        return [[nid, list(cores), list(gpus)]
                for nid, cores, gpus in self.node_slots]

    @classmethod
    def from_json(cls, task_id, data):
        return cls(task_id=task_id,
                   node_slots=tuple((nid, tuple(c), tuple(g))
                                    for nid, c, g in data))


class NodeState:
    """Per-slot occupancy of one node.

    Mutation is confined to the scheduler's single logical thread; snapshots
    handed across threads must be copies.
    """

    def __init__(self, spec):
        self.spec = spec
        # index -> owning task id, or FREE; only the usable core range exists
        self.core_occupancy = [FREE] * spec.usable_cpu_cores
        self.gpu_occupancy = [FREE] * spec.gpus

    @property
    def free_cores(self):
        return sum(1 for o in self.core_occupancy if o is FREE)

    @property
    def free_gpus(self):
        return sum(1 for o in self.gpu_occupancy if o is FREE)

    def free_core_ids(self):
        return [i for i, o in enumerate(self.core_occupancy) if o is FREE]

    def free_gpu_ids(self):
        return [i for i, o in enumerate(self.gpu_occupancy) if o is FREE]

    def slots_for(self, placement):
        for node_id, cores, gpus in placement.node_slots:
            if node_id == self.spec.node_id:
                return cores, gpus
        return (), ()

    def occupy(self, placement):
        cores, gpus = self.slots_for(placement)
        for c in cores:
            if not 0 <= c < len(self.core_occupancy):
                raise SlotError('core %d not usable on node %d' % (c, self.spec.node_id))
            if self.core_occupancy[c] is not FREE:
                raise SlotError('core %d on node %d already held by %s'
                                % (c, self.spec.node_id, self.core_occupancy[c]))
        for g in gpus:
            if not 0 <= g < len(self.gpu_occupancy):
                raise SlotError('gpu %d not present on node %d' % (g, self.spec.node_id))
            if self.gpu_occupancy[g] is not FREE:
                raise SlotError('gpu %d on node %d already held by %s'
                                % (g, self.spec.node_id, self.gpu_occupancy[g]))
        for c in cores:
            self.core_occupancy[c] = placement.task_id
        for g in gpus:
            self.gpu_occupancy[g] = placement.task_id

    def release(self, placement):
        cores, gpus = self.slots_for(placement)
        for c in cores:
            if self.core_occupancy[c] != placement.task_id:
                raise SlotError('core %d on node %d not owned by %s'
                                % (c, self.spec.node_id, placement.task_id))
        for g in gpus:
            if self.gpu_occupancy[g] != placement.task_id:
                raise SlotError('gpu %d on node %d not owned by %s'
                                % (g, self.spec.node_id, placement.task_id))
        for c in cores:
            self.core_occupancy[c] = FREE
        for g in gpus:
            self.gpu_occupancy[g] = FREE


class Pilot:
    """An acquired resource allocation with its clock and walltime countdown."""

    def __init__(self, description):
        self.description = description
        self.resource = description.resource
        self.nodes = [NodeState(spec) for spec in self.resource.nodes]
        # the clock origin is pilot submission; the pilot is ready to place
        # work once the startup latency has elapsed
        self.clock_us = 0
        self.ready_us = us(description.startup_latency)
        self.walltime_us = us(description.walltime)

    @property
    def deadline_us(self):
        return self.ready_us + self.walltime_us

    def occupy(self, placement):
        by_id = {n.spec.node_id: n for n in self.nodes}
        for node_id in placement.node_ids:
            if node_id not in by_id:
                raise SlotError('placement references unknown node %d' % node_id)
        for node_id in placement.node_ids:
            by_id[node_id].occupy(placement)

    def release(self, placement):
        by_id = {n.spec.node_id: n for n in self.nodes}
        for node_id in placement.node_ids:
            by_id[node_id].release(placement)

    @property
    def free_cores(self):
        return sum(n.free_cores for n in self.nodes)

    @property
    def free_gpus(self):
        return sum(n.free_gpus for n in self.nodes)


def acquire(description):
    """Acquire a pilot: every slot free, clock advanced by startup latency."""
    if not isinstance(description, PilotDescription):
        raise TypeError('expected a PilotDescription')
    return Pilot(description)
