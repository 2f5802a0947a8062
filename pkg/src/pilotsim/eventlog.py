"""JSON-lines event log: one row per state transition.

Rows carry integer-microsecond timestamps and are serialized with sorted
keys, so identical runs produce byte-identical logs.
"""

import json

TASK_EVENTS = ('queued', 'scheduled', 'launching', 'running',
               'done', 'failed', 'lost')
META_EVENTS = ('pilot', 'partition_start', 'partition_dead', 'admitted')


class LogError(Exception):
    def __init__(self, message, row=None):
        if row is not None:
            message = 'row %d: %s' % (row, message)
        super().__init__(message)
        self.row = row


class EventLog:
    def __init__(self, rows=None):
        self.rows = rows or []

    def append(self, t_us, event, task=None, **extra):
        row = {'t': int(t_us), 'event': event}
        if task is not None:
            row['task'] = task
        row.update(extra)
        self.rows.append(row)

    def task_rows(self):
        return [r for r in self.rows if r['event'] in TASK_EVENTS]

    def dumps(self):
        return ''.join(json.dumps(r, sort_keys=True, separators=(',', ':')) + '\n'
                       for r in self.rows)

    def write(self, path):
        with open(path, 'w') as fh:
            fh.write(self.dumps())

    @classmethod
    def read(cls, path):
        rows = []
        with open(path) as fh:
            for i, line in enumerate(fh):
                line = line.strip()
                if not line:
                    continue
                try:
                    row = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise LogError('malformed JSON (%s)' % exc, row=i + 1)
                if 't' not in row or 'event' not in row:
                    raise LogError('missing t/event field', row=i + 1)
                rows.append(row)
        return cls(rows)

    def pilot_info(self):
        """The pilot metadata row, if the log carries one."""
        for r in self.rows:
            if r['event'] == 'pilot':
                return r
        return None

    def task_intervals(self):
        """Per-task lifecycle extracted from transition rows.

        Returns {task_id: {'queued': t, 'exec_start': t, 'exec_end': t,
        'state': final, 'cores': n, 'gpus': n, 'credit': n, ...}}.
        """
        tasks = {}
        for i, r in enumerate(self.rows):
            ev = r['event']
            if ev not in TASK_EVENTS:
                continue
            tid = r.get('task')
            if tid is None:
                raise LogError('task event without task id', row=i + 1)
            rec = tasks.setdefault(tid, {'state': None, 'cores': 0, 'gpus': 0,
                                         'credit': 1})
            t = r['t']
            if ev == 'queued':
                rec['queued'] = t
            elif ev == 'scheduled':
                rec['scheduled'] = t
                if 'cores' in r:
                    rec['cores'] = r['cores']
                if 'gpus' in r:
                    rec['gpus'] = r['gpus']
            elif ev == 'launching':
                rec['launch_start'] = t
            elif ev == 'running':
                rec['exec_start'] = t
            elif ev in ('done', 'failed', 'lost'):
                rec[ev] = t
                if ev == 'done':
                    rec['exec_end'] = r.get('exec_end', t)
                if 'credit' in r:
                    rec['credit'] = r['credit']
            if rec['state'] not in ('done', 'failed', 'lost'):
                rec['state'] = ev
        return tasks


def state_sequence(log):
    """Timing-independent fingerprint of a run, used to compare the sim and
    real flavors: the global order of scheduling decisions plus each task's
    own lifecycle path.  Completion jitter inside a wave of equal-duration
    tasks does not change it."""
    scheduled_order = tuple(r['task'] for r in log.rows
                            if r['event'] == 'scheduled')
    paths = {}
    for r in log.rows:
        if r['event'] in TASK_EVENTS:
            paths.setdefault(r['task'], []).append(r['event'])
    return scheduled_order, {k: tuple(v) for k, v in paths.items()}
