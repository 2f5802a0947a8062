"""Declarative campaign configuration: YAML schema, validation, assembly.

A campaign file describes one run: the resource, the pilot, the scheduler,
the execution backend and flavor, and either a flat workload or a workflow
template.  Validation errors name the offending key path.
"""

from dataclasses import dataclass, field

import yaml

from .executors import BulkBackendConfig, PartitionPlan, StabilityLimits
from .overlay import MasterConfig
from .resources import NODE_PRESETS, NodeSpec, PilotDescription, ResourceSpec
from .scheduler import SchedulerConfig
from .workloads import make_preset, preset_names

SCHEMA_VERSION = 1

TEMPLATES = ('flat', 'wf1-overlay', 'wf2-deepdrive', 'wf3-esmacs',
             'wf4-ties', 'hybrid-lb')
BACKENDS = ('direct', 'partitioned', 'bulk', 'overlay')
FLAVORS = ('sim', 'real')


class ConfigError(Exception):
    """Invalid campaign config; the message names the offending key."""

    def __init__(self, path, message):
        super().__init__('%s: %s' % (path, message))
        self.path = path


def _get(d, key, path, required=False, default=None, types=None):
    if key not in d:
        if required:
            raise ConfigError('%s.%s' % (path, key) if path else key,
                              'required key missing')
        return default
    val = d[key]
    if types is not None and not isinstance(val, types):
        raise ConfigError('%s.%s' % (path, key) if path else key,
                          'expected %s, got %s'
                          % ('/'.join(t.__name__ for t in types),
                             type(val).__name__))
    return val


def _check_known(d, known, path):
    for key in d:
        if key not in known:
            raise ConfigError('%s.%s' % (path, key) if path else key,
                              'unknown key (known: %s)' % ', '.join(sorted(known)))


@dataclass
class CampaignConfig:
    seed: int
    resource: ResourceSpec
    pilot: PilotDescription
    scheduler: SchedulerConfig
    backend: str = 'direct'
    flavor: str = 'sim'
    template: str = 'flat'
    template_params: dict = field(default_factory=dict)
    workload: object = None          # WorkloadPreset or None
    plan: PartitionPlan = None
    limits: StabilityLimits = None
    bulk: BulkBackendConfig = None
    overlay: MasterConfig = None
    overlay_latency: float = 0.0
    overlay_slot_kind: str = 'cores'
    output_dir: str = 'out'
    completion_threshold: float = 0.95
    rate_window: float = 60.0


def _parse_resource(raw):
    _check_known(raw, {'preset', 'nodes', 'cpu_cores', 'gpus',
                       'usable_cpu_cores'}, 'resource')
    n_nodes = _get(raw, 'nodes', 'resource', required=True, types=(int,))
    if n_nodes < 1:
        raise ConfigError('resource.nodes', 'must be >= 1')
    preset = _get(raw, 'preset', 'resource', types=(str,))
    if preset is not None:
        if preset not in NODE_PRESETS:
            raise ConfigError('resource.preset',
                              'unknown preset %r (known: %s)'
                              % (preset, ', '.join(sorted(NODE_PRESETS))))
        return ResourceSpec.from_preset(preset, n_nodes)
    cores = _get(raw, 'cpu_cores', 'resource', required=True, types=(int,))
    gpus = _get(raw, 'gpus', 'resource', default=0, types=(int,))
    usable = _get(raw, 'usable_cpu_cores', 'resource', types=(int,))
    try:
        nodes = tuple(NodeSpec(node_id=i, cpu_cores=cores, gpus=gpus,
                               usable_cpu_cores=usable)
                      for i in range(n_nodes))
        return ResourceSpec(nodes=nodes)
    except ValueError as exc:
        raise ConfigError('resource', str(exc))


def _parse_plan(raw):
    if raw is None:
        return None
    _check_known(raw, {'count', 'nodes_per_partition', 'max_tasks_per_partition',
                       'per_partition_start_cost', 'post_start_sleep',
                       'per_launch_delay'}, 'pilot.partitions')
    try:
        return PartitionPlan(
            partition_count=_get(raw, 'count', 'pilot.partitions',
                                 required=True, types=(int,)),
            nodes_per_partition=_get(raw, 'nodes_per_partition',
                                     'pilot.partitions', required=True,
                                     types=(int,)),
            max_tasks_per_partition=_get(raw, 'max_tasks_per_partition',
                                         'pilot.partitions', types=(int,)),
            per_partition_start_cost=float(_get(raw, 'per_partition_start_cost',
                                                'pilot.partitions', default=0.5,
                                                types=(int, float))),
            post_start_sleep=float(_get(raw, 'post_start_sleep',
                                        'pilot.partitions', default=10.0,
                                        types=(int, float))),
            per_launch_delay=float(_get(raw, 'per_launch_delay',
                                        'pilot.partitions', default=0.1,
                                        types=(int, float))))
    except ValueError as exc:
        raise ConfigError('pilot.partitions', str(exc))


def _parse_limits(raw):
    if raw is None:
        return None
    _check_known(raw, {'stable_max_nodes', 'stable_max_tasks',
                       'startup_failure_p', 'internal_failure_p',
                       'lost_connection_p'}, 'stability')
    try:
        return StabilityLimits(**{k: raw[k] for k in raw})
    except (TypeError, ValueError) as exc:
        raise ConfigError('stability', str(exc))


def parse_config(raw):
    """Validate a loaded YAML mapping into a CampaignConfig."""
    if not isinstance(raw, dict):
        raise ConfigError('<root>', 'config must be a mapping')
    _check_known(raw, {'schema_version', 'seed', 'resource', 'pilot',
                       'scheduler', 'backend', 'flavor', 'workflow',
                       'workload', 'bulk', 'overlay', 'stability', 'output'},
                 '')
    version = _get(raw, 'schema_version', '', default=SCHEMA_VERSION,
                   types=(int,))
    if version != SCHEMA_VERSION:
        raise ConfigError('schema_version',
                          'unsupported version %d (supported: %d)'
                          % (version, SCHEMA_VERSION))
    seed = _get(raw, 'seed', '', required=True, types=(int,))

    resource = _parse_resource(_get(raw, 'resource', '', required=True,
                                    types=(dict,)))

    raw_pilot = _get(raw, 'pilot', '', required=True, types=(dict,))
    _check_known(raw_pilot, {'walltime', 'startup_latency', 'partitions'},
                 'pilot')
    plan = _parse_plan(_get(raw_pilot, 'partitions', 'pilot', types=(dict,)))
    try:
        pilot = PilotDescription(
            resource=resource,
            walltime=float(_get(raw_pilot, 'walltime', 'pilot', required=True,
                                types=(int, float))),
            startup_latency=float(_get(raw_pilot, 'startup_latency', 'pilot',
                                       default=0.0, types=(int, float))),
            partition_plan=plan)
    except ValueError as exc:
        raise ConfigError('pilot', str(exc))

    raw_sched = _get(raw, 'scheduler', '', default={}, types=(dict,))
    _check_known(raw_sched, {'algorithm', 'prioritize_large', 'tie_break'},
                 'scheduler')
    try:
        scheduler = SchedulerConfig(
            algorithm=_get(raw_sched, 'algorithm', 'scheduler',
                           default='continuous', types=(str,)),
            prioritize_large=_get(raw_sched, 'prioritize_large', 'scheduler',
                                  default=True, types=(bool,)),
            tie_break=_get(raw_sched, 'tie_break', 'scheduler',
                           default='lowest-node-id', types=(str,)))
    except ValueError as exc:
        raise ConfigError('scheduler', str(exc))

    backend = _get(raw, 'backend', '', default='direct', types=(str,))
    if backend not in BACKENDS:
        raise ConfigError('backend', 'unknown backend %r (known: %s)'
                          % (backend, ', '.join(BACKENDS)))
    flavor = _get(raw, 'flavor', '', default='sim', types=(str,))
    if flavor not in FLAVORS:
        raise ConfigError('flavor', 'unknown flavor %r (known: %s)'
                          % (flavor, ', '.join(FLAVORS)))
    if backend == 'partitioned' and plan is None:
        raise ConfigError('pilot.partitions',
                          'partitioned backend needs a partition plan')

    raw_wf = _get(raw, 'workflow', '', default={}, types=(dict,))
    _check_known(raw_wf, {'template', 'params'}, 'workflow')
    template = _get(raw_wf, 'template', 'workflow', default='flat',
                    types=(str,))
    if template not in TEMPLATES:
        raise ConfigError('workflow.template',
                          'unknown template %r (known: %s)'
                          % (template, ', '.join(TEMPLATES)))
    params = _get(raw_wf, 'params', 'workflow', default={}, types=(dict,))

    workload = None
    raw_wl = _get(raw, 'workload', '', types=(dict,))
    if raw_wl is not None:
        _check_known(raw_wl, {'preset', 'items', 'duration_scale'}, 'workload')
        preset = _get(raw_wl, 'preset', 'workload', required=True, types=(str,))
        if preset not in preset_names():
            raise ConfigError('workload.preset',
                              'unknown preset %r (known: %s)'
                              % (preset, ', '.join(preset_names())))
        workload = make_preset(
            preset,
            item_count=_get(raw_wl, 'items', 'workload', types=(int,)),
            seed=seed)
        scale = _get(raw_wl, 'duration_scale', 'workload', default=1.0,
                     types=(int, float))
        if scale != 1.0:
            workload = type(workload)(
                name=workload.name, item_count=workload.item_count,
                model=workload.model.scaled(float(scale)),
                bundle_size=workload.bundle_size, cores=workload.cores,
                gpus=workload.gpus, ranks=workload.ranks)
    if template in ('flat', 'wf1-overlay') and workload is None:
        raise ConfigError('workload',
                          'template %r needs a workload section' % template)
    if backend == 'overlay' and template not in ('flat', 'wf1-overlay'):
        raise ConfigError('backend',
                          'overlay backend only runs flat workloads')

    raw_bulk = _get(raw, 'bulk', '', types=(dict,))
    bulk = None
    if raw_bulk is not None:
        _check_known(raw_bulk, {'scheduling_rate', 'startup_cost'}, 'bulk')
        try:
            bulk = BulkBackendConfig(
                scheduling_rate=_get(raw_bulk, 'scheduling_rate', 'bulk',
                                     default=14.21),
                startup_cost=float(_get(raw_bulk, 'startup_cost', 'bulk',
                                        default=0.0, types=(int, float))))
        except ValueError as exc:
            raise ConfigError('bulk', str(exc))

    raw_ov = _get(raw, 'overlay', '', types=(dict,))
    overlay = None
    overlay_latency = 0.0
    overlay_slot_kind = 'cores'
    if raw_ov is not None:
        _check_known(raw_ov, {'nodes_per_master', 'bulk_size', 'latency',
                              'slot_kind', 'dispatch_order'}, 'overlay')
        try:
            overlay = MasterConfig(
                nodes_per_master=_get(raw_ov, 'nodes_per_master', 'overlay',
                                      default=100, types=(int,)),
                bulk_size=_get(raw_ov, 'bulk_size', 'overlay', default=1,
                               types=(int,)),
                dispatch_order=_get(raw_ov, 'dispatch_order', 'overlay',
                                    default='longest-first', types=(str,)))
        except ValueError as exc:
            raise ConfigError('overlay', str(exc))
        overlay_latency = float(_get(raw_ov, 'latency', 'overlay',
                                     default=0.0, types=(int, float)))
        overlay_slot_kind = _get(raw_ov, 'slot_kind', 'overlay',
                                 default='cores', types=(str,))
        if overlay_slot_kind not in ('cores', 'gpus'):
            raise ConfigError('overlay.slot_kind', 'must be cores or gpus')
    if backend == 'overlay' and overlay is None:
        overlay = MasterConfig()

    limits = _parse_limits(_get(raw, 'stability', '', types=(dict,)))

    raw_out = _get(raw, 'output', '', default={}, types=(dict,))
    _check_known(raw_out, {'dir', 'completion_threshold', 'rate_window'},
                 'output')
    threshold = float(_get(raw_out, 'completion_threshold', 'output',
                           default=0.95, types=(int, float)))
    if not 0.0 <= threshold <= 1.0:
        raise ConfigError('output.completion_threshold', 'must be in [0, 1]')

    return CampaignConfig(
        seed=seed, resource=resource, pilot=pilot, scheduler=scheduler,
        backend=backend, flavor=flavor, template=template,
        template_params=params, workload=workload, plan=plan, limits=limits,
        bulk=bulk, overlay=overlay, overlay_latency=overlay_latency,
        overlay_slot_kind=overlay_slot_kind,
        output_dir=_get(raw_out, 'dir', 'output', default='out', types=(str,)),
        completion_threshold=threshold,
        rate_window=float(_get(raw_out, 'rate_window', 'output', default=60.0,
                               types=(int, float))))


def load_config(path):
    with open(path) as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError('<file>', 'not valid YAML: %s' % exc)
    return parse_config(raw)
