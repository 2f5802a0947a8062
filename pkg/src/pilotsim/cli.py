"""Campaign driver.

    pilotsim run --config campaign.yaml [--seed N] [--backend B]
                 [--flavor F] [--out DIR]
    pilotsim report --log events.jsonl [--window S]

`run` assembles pilot + scheduler + backend + workflow from a YAML config,
executes, and writes the event log plus utilization/overhead/rate reports.
`report` recomputes the same reports from an event log alone.  Exit status
is 0 when at least the configured fraction of work completed.

Log verbosity is controlled by the PILOTSIM_LOG_LEVEL environment variable
(DEBUG, INFO, WARNING; default WARNING).
"""

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import replace

from .config import ConfigError, load_config
from .eventlog import EventLog, LogError
from .executors import ExecutionService, make_records
from .metrics import overhead, rate, utilization
from .overlay import OverlaySim, WorkItem
from .resources import acquire
from .tasks import TaskDescription
from .workflow import (AdaptiveLoopConfig, WorkflowEngine, deepdrive_pipeline,
                       esmacs_pipeline, iterate_adaptive, run_hybrid,
                       ties_pipeline)

log = logging.getLogger('pilotsim')


def _bundled_workload(preset, seed):
    """Group a preset's items into execution bundles; one sampled duration
    and a credit of bundle_size per bundle."""
    n_bundles = math.ceil(preset.item_count / preset.bundle_size)
    durations = preset.model.sample(n_bundles, seed=seed)
    descs = [TaskDescription(task_id='%s-%06d' % (preset.name, i),
                             cpu_cores_per_rank=preset.cores,
                             ranks=preset.ranks, gpus=preset.gpus)
             for i in range(n_bundles)]
    last_credit = preset.item_count - preset.bundle_size * (n_bundles - 1)
    credits = [preset.bundle_size] * (n_bundles - 1) + [last_credit]
    return descs, durations, credits


def _run_flat(cfg, pilot):
    service = ExecutionService(pilot, cfg.scheduler, backend=cfg.backend,
                               flavor=cfg.flavor, plan=cfg.plan,
                               limits=cfg.limits, bulk_cfg=cfg.bulk,
                               seed=cfg.seed)
    descs, durations, credits = _bundled_workload(cfg.workload, cfg.seed)
    records = make_records(descs, durations)
    for rec, credit in zip(records, credits):
        rec.credit = credit
    service.submit(records)
    service.run()
    done = sum(r.credit for r in records if r.state == 'done')
    return service.log, done, cfg.workload.item_count


def _run_overlay(cfg, pilot):
    preset = cfg.workload
    n_bundles = math.ceil(preset.item_count / preset.bundle_size)
    durations = preset.model.sample(n_bundles, seed=cfg.seed)
    last_credit = preset.item_count - preset.bundle_size * (n_bundles - 1)
    items = [WorkItem('%s-%06d' % (preset.name, i), float(d),
                      credit=(preset.bundle_size if i < n_bundles - 1
                              else last_credit))
             for i, d in enumerate(durations)]
    slot_kind = 'gpus' if preset.gpus else cfg.overlay_slot_kind
    sim = OverlaySim(pilot, cfg.overlay, items,
                     latency_s=cfg.overlay_latency, slot_kind=slot_kind)
    sim.run()
    done = sum(m.completed for m in sim.overlay.masters)
    # per-master credit bookkeeping counts bundles; credit the log's rows
    done_credit = sum(r.get('credit', 1) for r in sim.log.rows
                      if r['event'] == 'done')
    log.info('overlay: %d bundles done, %d messages', done, sim.message_count)
    return sim.log, done_credit, preset.item_count


def _run_deepdrive(cfg, pilot):
    p = cfg.template_params
    service = ExecutionService(pilot, cfg.scheduler, backend=cfg.backend,
                               flavor=cfg.flavor, plan=cfg.plan,
                               limits=cfg.limits, bulk_cfg=cfg.bulk,
                               seed=cfg.seed)
    loop = AdaptiveLoopConfig(
        max_iterations=int(p.get('iterations', 4)),
        outlier_probability=float(p.get('outlier_probability', 0.0)),
        comm_latency=float(p.get('comm_latency', 0.1)),
        seed=cfg.seed)
    durations = p.get('durations')

    def factory(generation):
        return deepdrive_pipeline(pilot, iteration=generation,
                                  durations=durations)

    iterate_adaptive(loop, service, factory)
    done = sum(1 for r in service.records.values() if r.state == 'done')
    return service.log, done, len(service.records)


def _run_pipelines(cfg, pilot, pipelines, comm_latency):
    service = ExecutionService(pilot, cfg.scheduler, backend=cfg.backend,
                               flavor=cfg.flavor, plan=cfg.plan,
                               limits=cfg.limits, bulk_cfg=cfg.bulk,
                               seed=cfg.seed)
    engine = WorkflowEngine(service, comm_latency_s=comm_latency)
    engine.run_pipelines(pipelines)
    done = sum(1 for r in service.records.values() if r.state == 'done')
    return service.log, done, len(service.records)


def _run_ensemble(cfg, pilot, make_pipeline):
    p = cfg.template_params
    count = int(p.get('count', 1))
    duration = float(p.get('duration', 320.0))
    pipelines = [make_pipeline(i, duration=duration) for i in range(count)]
    return _run_pipelines(cfg, pilot, pipelines,
                          float(p.get('comm_latency', 0.0)))


def _run_hybrid(cfg, pilot):
    p = cfg.template_params
    service = ExecutionService(pilot, cfg.scheduler, backend=cfg.backend,
                               flavor=cfg.flavor, plan=cfg.plan,
                               limits=cfg.limits, bulk_cfg=cfg.bulk,
                               seed=cfg.seed)
    run_hybrid(int(p.get('wf3_count', 1)), int(p.get('wf4_count', 1)),
               service,
               wf3_duration=float(p.get('wf3_duration', 320.0)),
               wf4_duration=float(p.get('wf4_duration', 320.0)),
               comm_latency_s=float(p.get('comm_latency', 0.0)))
    done = sum(1 for r in service.records.values() if r.state == 'done')
    return service.log, done, len(service.records)


_TEMPLATE_RUNNERS = {
    'flat': _run_flat,
    'wf1-overlay': _run_overlay,
    'wf2-deepdrive': _run_deepdrive,
    'wf3-esmacs': lambda cfg, pilot: _run_ensemble(cfg, pilot, esmacs_pipeline),
    'wf4-ties': lambda cfg, pilot: _run_ensemble(cfg, pilot, ties_pipeline),
    'hybrid-lb': _run_hybrid,
}


def write_reports(event_log, out_dir, rate_window=60.0):
    """Write utilization/overhead/rate reports plus the timeline CSV next
    to the event log; returns the report dict."""
    util = utilization(event_log)
    ovh = overhead(event_log)
    rates = rate(event_log, rate_window)
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, 'utilization.json'), 'w') as fh:
        json.dump(util.to_json(), fh, indent=2, sort_keys=True)
    with open(os.path.join(out_dir, 'overhead.json'), 'w') as fh:
        json.dump(ovh.to_json(), fh, indent=2, sort_keys=True)
    with open(os.path.join(out_dir, 'rate.json'), 'w') as fh:
        json.dump(rates.to_json(), fh, indent=2, sort_keys=True)
    with open(os.path.join(out_dir, 'timeline.csv'), 'w', newline='') as fh:
        writer = csv.writer(fh)
        writer.writerow(['t_seconds', 'cpu_utilization', 'gpu_utilization'])
        writer.writerows(util.timeline)
    return {'utilization': util.to_json(), 'overhead': ovh.to_json(),
            'rate': rates.to_json()}


def run_campaign(cfg):
    """Execute one campaign; returns (summary dict, exit status)."""
    pilot = acquire(cfg.pilot)
    if cfg.backend == 'overlay' and cfg.template in ('flat', 'wf1-overlay'):
        runner = _run_overlay
    else:
        runner = _TEMPLATE_RUNNERS[cfg.template]
    event_log, done, total = runner(cfg, pilot)

    os.makedirs(cfg.output_dir, exist_ok=True)
    event_log.write(os.path.join(cfg.output_dir, 'events.jsonl'))
    reports = write_reports(event_log, cfg.output_dir,
                            rate_window=cfg.rate_window)

    states = {}
    for row in event_log.task_rows():
        if row['event'] in ('done', 'failed', 'lost'):
            states[row['event']] = states.get(row['event'], 0) + 1
    fraction = done / total if total else 0.0
    summary = {
        'template': cfg.template, 'backend': cfg.backend,
        'flavor': cfg.flavor, 'seed': cfg.seed,
        'work_done': done, 'work_total': total,
        'completion_fraction': fraction,
        'terminal_counts': states,
        'completion_threshold': cfg.completion_threshold,
    }
    summary.update(reports)
    with open(os.path.join(cfg.output_dir, 'summary.json'), 'w') as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    status = 0 if fraction >= cfg.completion_threshold else 1
    if states.get('failed') or states.get('lost'):
        log.warning('run finished with failures: %s', states)
    return summary, status


def _cmd_run(args):
    try:
        cfg = load_config(args.config)
    except (ConfigError, OSError) as exc:
        print('config error: %s' % exc, file=sys.stderr)
        return 2
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.backend is not None:
        cfg = replace(cfg, backend=args.backend)
    if args.flavor is not None:
        cfg = replace(cfg, flavor=args.flavor)
    if args.out is not None:
        cfg = replace(cfg, output_dir=args.out)
    summary, status = run_campaign(cfg)
    print('completed %d/%d work items (%.1f%%); artifacts in %s'
          % (summary['work_done'], summary['work_total'],
             100.0 * summary['completion_fraction'], cfg.output_dir))
    return status


def _cmd_report(args):
    try:
        event_log = EventLog.read(args.log)
    except (LogError, OSError) as exc:
        print('log error: %s' % exc, file=sys.stderr)
        return 2
    out_dir = args.out or os.path.dirname(os.path.abspath(args.log))
    reports = write_reports(event_log, out_dir, rate_window=args.window)
    print(json.dumps({'utilization': reports['utilization'],
                      'overhead': reports['overhead']},
                     indent=2, sort_keys=True))
    return 0


def main(argv=None):
    logging.basicConfig(
        level=os.environ.get('PILOTSIM_LOG_LEVEL', 'WARNING').upper())
    parser = argparse.ArgumentParser(
        prog='pilotsim', description='pilot-based task-execution campaigns')
    sub = parser.add_subparsers(dest='command', required=True)

    p_run = sub.add_parser('run', help='execute a campaign config')
    p_run.add_argument('--config', required=True, help='campaign YAML')
    p_run.add_argument('--seed', type=int, help='override the config seed')
    p_run.add_argument('--backend',
                       choices=('direct', 'partitioned', 'bulk', 'overlay'),
                       help='override the execution backend')
    p_run.add_argument('--flavor', choices=('sim', 'real'),
                       help='override the execution flavor')
    p_run.add_argument('--out', help='override the output directory')
    p_run.set_defaults(fn=_cmd_run)

    p_rep = sub.add_parser('report', help='recompute reports from a log')
    p_rep.add_argument('--log', required=True, help='events.jsonl path')
    p_rep.add_argument('--window', type=float, default=60.0,
                       help='rate window in seconds')
    p_rep.add_argument('--out', help='report output directory')
    p_rep.set_defaults(fn=_cmd_report)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == '__main__':
    sys.exit(main())
