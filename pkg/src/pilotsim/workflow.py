"""Pipeline/stage/task engine with adaptive iteration.

Stages run strictly in order inside a pipeline (implicit barrier: a stage
completes when all its tasks are terminal); tasks within a stage run
concurrently; pipelines run concurrently against one executor.  A
configurable communication latency is charged once per engine action
(stage submit and stage collect), modeling the round-trip between the
workflow engine and its message broker.
"""

from dataclasses import dataclass, field

import numpy as np

from .resources import us
from .tasks import TaskDescription, TaskRecord
from .workloads import DurationModel


class WorkflowError(Exception):
    pass


@dataclass
class Stage:
    stage_id: str
    tasks: list                      # TaskDescription; payload gives duration

    def __post_init__(self):
        if not self.tasks:
            raise ValueError('stage %s has no tasks' % self.stage_id)


@dataclass
class Pipeline:
    pipeline_id: str
    stages: list
    adaptivity: object = None        # fn(iteration, records) -> directive

    def __post_init__(self):
        if not self.stages:
            raise ValueError('pipeline %s has no stages' % self.pipeline_id)


@dataclass(frozen=True)
class AdaptiveLoopConfig:
    max_iterations: int = 8
    outlier_probability: float = 0.0
    comm_latency: float = 0.0        # seconds per engine<->broker round-trip
    seed: int = 0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError('max_iterations must be >= 1')
        if not 0.0 <= self.outlier_probability <= 1.0:
            raise ValueError('outlier_probability must be in [0, 1]')


class _PipelineRun:
    def __init__(self, pipeline):
        self.pipeline = pipeline
        self.stage_idx = 0
        self.open_tasks = 0
        self.records = []            # (stage_id, TaskRecord)
        self.failed = False
        self.finished = False
        self.iteration = 0


class WorkflowEngine:
    """Single logical control loop over one ExecutionService; all task
    concurrency lives in the executor underneath."""

    def __init__(self, service, comm_latency_s=0.0, failure_policy='continue',
                 seed=0):
        if failure_policy not in ('continue', 'abort'):
            raise ValueError('failure policy must be continue or abort')
        self.service = service
        self.latency_us = us(comm_latency_s)
        self.failure_policy = failure_policy
        self._rng = np.random.default_rng(seed)
        self._runs = []
        self._by_task = {}
        self._task_seq = 0
        service.on_terminal.append(self._on_terminal)

    # ------------------------------------------------------------------

    def _resolve_duration(self, payload):
        if payload is None:
            return 0.0
        if isinstance(payload, (int, float)):
            return float(payload)
        if isinstance(payload, DurationModel):
            seed = int(self._rng.integers(0, 2**31 - 1))
            return float(payload.sample(1, seed=seed)[0])
        raise WorkflowError('cannot interpret payload %r' % (payload,))

    def _records_for(self, run, stage):
        records = []
        for desc in stage.tasks:
            dur = self._resolve_duration(desc.payload)
            # adaptive loops may resubmit the same logical task; records
            # get a unique instance id while keeping the description id
            rec_id = desc.task_id
            if rec_id in self.service.records:
                self._task_seq += 1
                rec_id = '%s@%d' % (desc.task_id, self._task_seq)
            rec = TaskRecord(task_id=rec_id, description=desc,
                             duration_us=us(dur))
            self._by_task[rec_id] = (run, stage.stage_id)
            records.append(rec)
            run.records.append((stage.stage_id, rec))
        return records

    def _submit_stage(self, run, t_us):
        stage = run.pipeline.stages[run.stage_idx]
        records = self._records_for(run, stage)
        run.open_tasks = len(records)
        self.service.submit_at(t_us, records)

    def _on_terminal(self, rec, t_us):
        entry = self._by_task.get(rec.task_id)
        if entry is None:
            return
        run, _stage_id = entry
        if rec.state in ('failed', 'lost') and self.failure_policy == 'abort':
            run.failed = True
        run.open_tasks -= 1
        if run.open_tasks > 0:
            return
        # stage barrier reached; collect (one latency), then either submit
        # the next stage (one more latency) or finish the pipeline
        run.stage_idx += 1
        collect_t = t_us + self.latency_us
        if run.failed or run.stage_idx >= len(run.pipeline.stages):
            self.service.engine.at(collect_t,
                                   lambda: self._pipeline_done(run))
        else:
            self._submit_stage(run, collect_t + self.latency_us)

    def _pipeline_done(self, run):
        hook = run.pipeline.adaptivity
        if hook is None:
            run.finished = True
            return
        directive = hook(run.iteration, run.records)
        if directive == 'stop':
            run.finished = True
            return
        if directive not in ('repeat-continue', 'repeat-with-new-tasks'):
            raise WorkflowError('unknown adaptivity directive %r' % directive)
        run.iteration += 1
        run.stage_idx = 0
        t = self.service.engine.now + self.latency_us
        self._submit_stage(run, t)

    # ------------------------------------------------------------------

    def run_pipelines(self, pipelines):
        """Run pipelines concurrently to completion; returns the runs."""
        self._runs = [_PipelineRun(p) for p in pipelines]
        t0 = self.service.engine.now + self.latency_us
        for run in self._runs:
            self._submit_stage(run, t0)
        self.service.run()
        return self._runs

    def ttx_s(self):
        stamps = [rec.timestamps for _, rec in
                  (pair for run in self._runs for pair in run.records)]
        queued = [ts['queued'] for ts in stamps if 'queued' in ts]
        ends = [max(ts.values()) for ts in stamps if ts]
        if not queued or not ends:
            return 0.0
        return (max(ends) - min(queued)) / 1e6


def run_pipeline(pipeline, service, comm_latency_s=0.0,
                 failure_policy='continue'):
    """Run one pipeline; returns (records, ttx_seconds)."""
    eng = WorkflowEngine(service, comm_latency_s=comm_latency_s,
                         failure_policy=failure_policy)
    runs = eng.run_pipelines([pipeline])
    return runs[0].records, eng.ttx_s()


# ----------------------------------------------------------------------
# templates


def _task(tid, cores=1, gpus=0, ranks=1, payload=0.0, stage_ref=None):
    return TaskDescription(task_id=tid, cpu_cores_per_rank=cores, ranks=ranks,
                           gpus=gpus, payload=payload, stage_ref=stage_ref)


# Stage durations (seconds) of the 4-stage MD/ML loop template, chosen so a
# GPU-filled ensemble stage dominates each iteration.
DEEPDRIVE_DEFAULTS = {
    'md': 600.0, 'aggregate': 15.0, 'train': 30.0, 'infer': 10.0,
    'train_nodes_per_task': 20,
}


def deepdrive_pipeline(pilot, iteration=0, durations=None, tag=''):
    """4-stage adaptive loop: MD ensemble (one task per GPU) -> aggregate
    -> train (one GPU task per ~20 nodes) -> infer."""
    d = dict(DEEPDRIVE_DEFAULTS)
    if durations:
        d.update(durations)
    n_nodes = len(pilot.nodes)
    n_gpus = pilot.resource.total_gpus
    n_train = max(n_nodes // d['train_nodes_per_task'], 1)
    pre = 'wf2%s-i%d' % (tag, iteration)
    md = Stage('md', [_task('%s-md%04d' % (pre, i), gpus=1, payload=d['md'],
                            stage_ref='md') for i in range(n_gpus)])
    agg = Stage('aggregate', [_task('%s-agg' % pre, cores=1,
                                    payload=d['aggregate'],
                                    stage_ref='aggregate')])
    train = Stage('train', [_task('%s-train%02d' % (pre, i), gpus=1,
                                  payload=d['train'], stage_ref='train')
                            for i in range(n_train)])
    infer = Stage('infer', [_task('%s-infer' % pre, gpus=1,
                                  payload=d['infer'], stage_ref='infer')])
    return Pipeline('%s' % pre, [md, agg, train, infer])


def iterate_adaptive(loop_cfg, service, pipeline_factory):
    """Run a 4-stage loop up to max_iterations; after each iteration the
    outlier draw decides whether stage 1 is regenerated (outliers found,
    generation counter advances) or repeated as-is.

    pipeline_factory(generation) must return a deterministic 4-stage
    Pipeline for a given generation, so the continue branch reuses the
    identical stage-1 task list.  Returns (runs, summaries, engine).
    """
    rng = np.random.default_rng(loop_cfg.seed)
    summaries = []
    generation = {'n': 0}

    pipeline = pipeline_factory(0)
    if len(pipeline.stages) != 4:
        raise WorkflowError('adaptive loop template must have 4 stages')

    def hook(iteration, records):
        if iteration + 1 >= loop_cfg.max_iterations:
            summaries.append({'iteration': iteration, 'branch': 'stop',
                              'generation': generation['n']})
            return 'stop'
        outliers = rng.random() < loop_cfg.outlier_probability
        if outliers:
            generation['n'] += 1
            branch = 'repeat-with-new-tasks'
        else:
            branch = 'repeat-continue'
        summaries.append({'iteration': iteration, 'branch': branch,
                          'generation': generation['n']})
        pipeline.stages = pipeline_factory(generation['n']).stages
        return branch

    pipeline.adaptivity = hook
    eng = WorkflowEngine(service, comm_latency_s=loop_cfg.comm_latency,
                         seed=loop_cfg.seed)
    runs = eng.run_pipelines([pipeline])
    return runs, summaries, eng


def esmacs_pipeline(index, duration=320.0, stages=4):
    """GPU-resident pipeline: 1 GPU + 1 core per stage task."""
    return Pipeline('wf3-%04d' % index,
                    [Stage('s%d' % s,
                           [_task('wf3-%04d-s%d' % (index, s), cores=1,
                                  gpus=1, payload=duration)])
                     for s in range(stages)])


def ties_pipeline(index, duration=320.0, stages=3, ranks=36):
    """CPU-resident MPI pipeline: one 36-rank task per stage."""
    return Pipeline('wf4-%04d' % index,
                    [Stage('s%d' % s,
                           [_task('wf4-%04d-s%d' % (index, s), cores=1,
                                  ranks=ranks, payload=duration)])
                     for s in range(stages)])


def run_hybrid(wf3_count, wf4_count, service, wf3_duration=320.0,
               wf4_duration=320.0, comm_latency_s=0.0):
    """Concurrent GPU-resident and CPU-resident pipelines on one pilot."""
    if wf3_count < 0 or wf4_count < 0:
        raise ValueError('pipeline counts must be >= 0')
    pipelines = [esmacs_pipeline(i, duration=wf3_duration)
                 for i in range(wf3_count)]
    pipelines += [ties_pipeline(i, duration=wf4_duration)
                  for i in range(wf4_count)]
    eng = WorkflowEngine(service, comm_latency_s=comm_latency_s)
    runs = eng.run_pipelines(pipelines)
    return runs, eng
