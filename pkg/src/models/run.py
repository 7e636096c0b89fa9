import json
import sqlite3
from datetime import datetime

from src.database_sqlite import get_db_connection


def _dumps(data):
    return json.dumps(data, sort_keys=True, default=str)


class Run:
    def __init__(self, id=None, command=None, config_json=None, domain_kind=None, n=None,
                 status='running', exit_code=None, summary_json=None, created_at=None):
        self.id = id
        self.command = command
        self.config_json = config_json
        self.domain_kind = domain_kind
        self.n = n
        self.status = status
        self.exit_code = exit_code
        self.summary_json = summary_json
        self.created_at = created_at

    @classmethod
    def create(cls, command, config=None):
        """Record the start of a command"""
        conn = get_db_connection()
        cursor = conn.cursor()

        try:
            config_data = config.to_dict() if config is not None else {}
            domain = config_data.get('domain') or {}
            cursor.execute('''
                INSERT INTO runs (command, config_json, domain_kind, n, status, created_at)
                VALUES (?, ?, ?, ?, ?, ?)
            ''', (command, _dumps(config_data), domain.get('kind'), config_data.get('n'),
                  'running', datetime.now()))

            run_id = cursor.lastrowid
            conn.commit()

            return cls.get_by_id(run_id)

        except sqlite3.Error as e:
            conn.rollback()
            raise Exception(f"Database error: {e}")
        finally:
            conn.close()

    @classmethod
    def get_by_id(cls, run_id):
        """Get run by ID"""
        conn = get_db_connection()
        cursor = conn.cursor()

        try:
            cursor.execute('SELECT * FROM runs WHERE id = ?', (run_id,))
            row = cursor.fetchone()

            if row:
                return cls(*row)
            return None

        except sqlite3.Error as e:
            raise Exception(f"Database error: {e}")
        finally:
            conn.close()

    @classmethod
    def get_all(cls, limit=None, command=None):
        """Get runs, newest first"""
        conn = get_db_connection()
        cursor = conn.cursor()

        try:
            query = 'SELECT * FROM runs'
            params = []
            if command:
                query += ' WHERE command = ?'
                params.append(command)
            query += ' ORDER BY id DESC'
            if limit:
                query += ' LIMIT ?'
                params.append(limit)
            cursor.execute(query, params)
            return [cls(*row) for row in cursor.fetchall()]

        except sqlite3.Error as e:
            raise Exception(f"Database error: {e}")
        finally:
            conn.close()

    def finish(self, status, exit_code, summary=None):
        """Store the outcome of the run"""
        conn = get_db_connection()
        cursor = conn.cursor()

        try:
            self.status = status
            self.exit_code = exit_code
            self.summary_json = _dumps(summary or {})
            cursor.execute('''
                UPDATE runs SET status = ?, exit_code = ?, summary_json = ? WHERE id = ?
            ''', (status, exit_code, self.summary_json, self.id))
            conn.commit()
            return True

        except sqlite3.Error as e:
            conn.rollback()
            raise Exception(f"Database error: {e}")
        finally:
            conn.close()

    def get_checks(self):
        """Get check results recorded for this run"""
        return CheckResult.get_by_run_id(self.id)

    def to_dict(self, include_checks=False):
        data = {
            'id': self.id,
            'command': self.command,
            'domain_kind': self.domain_kind,
            'n': self.n,
            'status': self.status,
            'exit_code': self.exit_code,
            'summary': json.loads(self.summary_json) if self.summary_json else None,
            'created_at': str(self.created_at) if self.created_at else None,
        }
        if include_checks:
            data['checks'] = [check.to_dict() for check in self.get_checks()]
        return data


class CheckResult:
    def __init__(self, id=None, run_id=None, check_name=None, status=None, samples=None,
                 violations=None, worst_margin=None, payload_json=None, created_at=None):
        self.id = id
        self.run_id = run_id
        self.check_name = check_name
        self.status = status
        self.samples = samples
        self.violations = violations
        self.worst_margin = worst_margin
        self.payload_json = payload_json
        self.created_at = created_at

    @classmethod
    def create(cls, run_id, check_name, status, payload):
        """Record one suite outcome"""
        conn = get_db_connection()
        cursor = conn.cursor()

        try:
            cursor.execute('''
                INSERT INTO check_results (run_id, check_name, status, samples, violations,
                                           worst_margin, payload_json, created_at)
                VALUES (?, ?, ?, ?, ?, ?, ?, ?)
            ''', (run_id, check_name, status, payload.get('samples'), payload.get('violations'),
                  payload.get('worst_margin'), _dumps(payload), datetime.now()))

            conn.commit()
            return cursor.lastrowid

        except sqlite3.Error as e:
            conn.rollback()
            raise Exception(f"Database error: {e}")
        finally:
            conn.close()

    @classmethod
    def get_by_run_id(cls, run_id):
        """Get check results by run ID"""
        conn = get_db_connection()
        cursor = conn.cursor()

        try:
            cursor.execute('SELECT * FROM check_results WHERE run_id = ? ORDER BY id', (run_id,))
            return [cls(*row) for row in cursor.fetchall()]

        except sqlite3.Error as e:
            raise Exception(f"Database error: {e}")
        finally:
            conn.close()

    def to_dict(self):
        return {
            'id': self.id,
            'run_id': self.run_id,
            'check_name': self.check_name,
            'status': self.status,
            'samples': self.samples,
            'violations': self.violations,
            'worst_margin': self.worst_margin,
            'payload': json.loads(self.payload_json) if self.payload_json else None,
        }
