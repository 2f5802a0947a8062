import pytest

from pilotsim.executors import ExecutionService
from pilotsim.resources import PilotDescription, ResourceSpec, acquire, us
from pilotsim.scheduler import SchedulerConfig
from pilotsim.tasks import TaskDescription
from pilotsim.workflow import (AdaptiveLoopConfig, Pipeline, Stage,
                               WorkflowEngine, deepdrive_pipeline,
                               esmacs_pipeline, iterate_adaptive,
                               run_hybrid, run_pipeline, ties_pipeline)


def _pilot(preset='summit-node', nodes=2, walltime=1e6, startup=0.0):
    res = ResourceSpec.from_preset(preset, nodes)
    return acquire(PilotDescription(resource=res, walltime=walltime,
                                    startup_latency=startup))


def _service(pilot):
    return ExecutionService(pilot, SchedulerConfig())


def _stage(sid, n, dur, prefix):
    return Stage(sid, [TaskDescription(task_id='%s-%s%d' % (prefix, sid, i),
                                       payload=dur) for i in range(n)])


def test_stage_barrier_is_strict():
    """Stage 2 must not start until every stage-1 task has finished."""
    pilot = _pilot()
    svc = _service(pilot)
    pipe = Pipeline('p', [_stage('s1', 3, 5.0, 'p'), _stage('s2', 2, 1.0, 'p')])
    records, ttx = run_pipeline(pipe, svc)
    by_stage = {}
    for sid, rec in records:
        by_stage.setdefault(sid, []).append(rec)
    s1_end = max(r.exec_end for r in by_stage['s1'])
    s2_start = min(r.timestamps['queued'] for r in by_stage['s2'])
    assert s2_start >= s1_end
    assert ttx == pytest.approx(6.0)


def test_comm_latency_charged_per_transition():
    """One latency at stage collect plus one at next submit."""
    pilot = _pilot()
    base = Pipeline('p', [_stage('s1', 1, 2.0, 'p'), _stage('s2', 1, 2.0, 'p')])
    _, ttx0 = run_pipeline(base, _service(_pilot()))
    again = Pipeline('p', [_stage('s1', 1, 2.0, 'p'), _stage('s2', 1, 2.0, 'p')])
    _, ttx1 = run_pipeline(again, _service(_pilot()), comm_latency_s=0.5)
    # collect + submit between the two stages = 2 extra latencies inside
    # the queued-to-done window
    assert ttx1 - ttx0 == pytest.approx(1.0)


def test_pipelines_run_concurrently():
    pilot = _pilot()
    svc = _service(pilot)
    pipes = [Pipeline('p%d' % i, [_stage('s1', 2, 4.0, 'p%d' % i)])
             for i in range(3)]
    eng = WorkflowEngine(svc)
    eng.run_pipelines(pipes)
    assert eng.ttx_s() == pytest.approx(4.0)


def test_failure_policy_abort_stops_pipeline():
    pilot = _pilot(walltime=3.0)     # walltime kills the long task
    svc = _service(pilot)
    pipe = Pipeline('p', [_stage('s1', 1, 10.0, 'p'),
                          _stage('s2', 1, 1.0, 'p')])
    records, _ = run_pipeline(pipe, svc, failure_policy='abort')
    stages = {sid for sid, _ in records}
    assert stages == {'s1'}          # s2 never submitted


def test_adaptive_repeat_continue_reuses_task_ids():
    pilot = _pilot()
    svc = _service(pilot)
    loop = AdaptiveLoopConfig(max_iterations=3, outlier_probability=0.0,
                              seed=1)
    runs, summaries, _ = iterate_adaptive(
        loop, svc, lambda gen: deepdrive_pipeline(pilot, iteration=gen))
    assert [s['branch'] for s in summaries] == \
        ['repeat-continue', 'repeat-continue', 'stop']
    assert all(s['generation'] == 0 for s in summaries)
    # same logical md tasks resubmitted each iteration
    md_ids = {r.description.task_id for sid, r in runs[0].records
              if sid == 'md'}
    assert len(md_ids) == pilot.resource.total_gpus


def test_adaptive_outliers_advance_generation():
    pilot = _pilot()
    svc = _service(pilot)
    loop = AdaptiveLoopConfig(max_iterations=4, outlier_probability=1.0,
                              seed=1)
    _, summaries, _ = iterate_adaptive(
        loop, svc, lambda gen: deepdrive_pipeline(pilot, iteration=gen))
    assert [s['branch'] for s in summaries[:-1]] == \
        ['repeat-with-new-tasks'] * 3
    assert summaries[-2]['generation'] == 3


def test_adaptive_requires_four_stages():
    pilot = _pilot()
    svc = _service(pilot)
    loop = AdaptiveLoopConfig(max_iterations=2)
    with pytest.raises(Exception, match='4 stages'):
        iterate_adaptive(loop, svc,
                         lambda gen: Pipeline('p', [_stage('s1', 1, 1.0, 'p')]))


def test_deepdrive_template_shape():
    pilot = _pilot(nodes=20)
    pipe = deepdrive_pipeline(pilot)
    assert [s.stage_id for s in pipe.stages] == \
        ['md', 'aggregate', 'train', 'infer']
    assert len(pipe.stages[0].tasks) == 120       # one MD task per GPU
    assert all(t.gpus == 1 for t in pipe.stages[0].tasks)
    assert len(pipe.stages[2].tasks) == 1         # one train task per ~20 nodes


def test_ensemble_templates_shape():
    es = esmacs_pipeline(0)
    assert len(es.stages) == 4
    assert all(t.gpus == 1 and t.ranks == 1
               for s in es.stages for t in s.tasks)
    ti = ties_pipeline(0)
    assert len(ti.stages) == 3
    assert all(t.ranks == 36 for s in ti.stages for t in s.tasks)


def test_run_hybrid_places_both_kinds_concurrently():
    pilot = _pilot(nodes=2)
    svc = _service(pilot)
    runs, eng = run_hybrid(2, 1, svc, wf3_duration=5.0, wf4_duration=5.0)
    recs = [r for run in runs for _, r in run.records]
    assert all(r.state == 'done' for r in recs)
    # GPU and CPU pipelines overlap in time
    gpu = [r for r in recs if r.description.gpus]
    cpu = [r for r in recs if r.description.ranks > 1]
    overlap = (min(r.exec_start for r in gpu) < max(r.exec_end for r in cpu)
               and min(r.exec_start for r in cpu) < max(r.exec_end
                                                        for r in gpu))
    assert overlap
