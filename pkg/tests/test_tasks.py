import sys
from pathlib import Path
import unittest

import pytest

THIS_DIR = Path(__file__).absolute().parent

# Add project root to import path
PROJECT_ROOT = THIS_DIR.parent
if PROJECT_ROOT not in [Path(s).absolute() for s in sys.path]:
    sys.path.insert(0, str(PROJECT_ROOT))

from cpnet.tasks import Task, TaskQueue


class TaskTests(unittest.TestCase):
    def test_arguments_are_passed(self):
        task = Task(0, lambda a, b=0: a + b, 2, b=3)
        self.assertEqual(task(), 5)
        self.assertEqual(task(), 5)
        self.assertEqual(task.calls, 2)

    def test_queue_order(self):
        queue = TaskQueue()
        task1 = Task(1, lambda: None)
        task2 = Task(2, lambda: None)
        task3 = Task(3, lambda: None)
        queue.add(task1)
        queue.add(task3)
        queue.add(task2)
        self.assertEqual(list(queue), [task1, task2, task3])
        self.assertIs(queue.next(), task1)
        self.assertIs(queue.pop(), task1)
        queue.cancel(task2)
        self.assertEqual(list(queue), [task3])

    def test_repeat_is_requeued(self):
        queue = TaskQueue()
        task = Task(10, lambda: None)
        due_at = task.due_at
        queue.add(task, repeat=True)
        self.assertIs(queue.pop(), task)
        self.assertEqual(len(queue), 1)
        self.assertIs(queue.next(), task)
        self.assertGreaterEqual(task.due_at, due_at + 10)
        with self.assertRaises(ValueError):
            queue.add(Task(0, lambda: None), repeat=True)

    def test_run_due(self):
        queue = TaskQueue()
        calls = []
        queue.add(Task(-2, calls.append, 'late'))
        queue.add(Task(-5, calls.append, 'later'))
        queue.add(Task(60, calls.append, 'future'))
        self.assertEqual(queue.run_due(), 2)
        self.assertEqual(calls, ['later', 'late'])
        self.assertEqual(len(queue), 1)

    def test_overdue_repeat_runs_once(self):
        queue = TaskQueue()
        task = Task(1, lambda: None)
        task.due_at -= 100
        queue.add(task, repeat=True)
        self.assertEqual(queue.run_due(), 1)
        self.assertGreater(task.due_in(), 0)

    def test_timeout_ms(self):
        queue = TaskQueue()
        self.assertIsNone(queue.timeout_ms())
        queue.add(Task(-5, lambda: None))
        self.assertEqual(queue.timeout_ms(), 0)
        queue.add(Task(60, lambda: None))
        self.assertEqual(queue.timeout_ms(), 0)
        queue.pop()
        self.assertGreater(queue.timeout_ms(), 50000)


if __name__ == '__main__':
    pytest.main([__file__, '-v'])
