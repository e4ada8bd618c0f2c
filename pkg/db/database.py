"""
SQLite run ledger for solver runs and their artifacts.
"""
import json
import logging
import sqlite3
from pathlib import Path
from typing import Any, Dict, List, Optional

logger = logging.getLogger(__name__)


class RunStore:
    """Records every CLI run with its artifacts, solutions and Monte Carlo estimates."""

    def __init__(self, db_path: str = "./runs/ledger.db"):
        """
        Open the ledger and create tables.

        Args:
            db_path: Path to SQLite database file
        """
        self.db_path = db_path
        if db_path != ":memory:":
            Path(db_path).parent.mkdir(parents=True, exist_ok=True)

        self.conn = sqlite3.connect(db_path, check_same_thread=False)
        self.conn.row_factory = sqlite3.Row
        self._create_tables()
        logger.debug(f"Run ledger opened at {db_path}")

    def _create_tables(self):
        """Create all required tables if they don't exist."""
        cursor = self.conn.cursor()

        cursor.execute("""
            CREATE TABLE IF NOT EXISTS runs (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                subcommand TEXT NOT NULL,
                model_name TEXT,
                model_sha256 TEXT,
                seed INTEGER,
                output_dir TEXT,
                status TEXT DEFAULT 'RUNNING',
                exit_code INTEGER,
                message TEXT,
                started_at TIMESTAMP DEFAULT CURRENT_TIMESTAMP,
                finished_at TIMESTAMP
            )
        """)

        cursor.execute("""
            CREATE TABLE IF NOT EXISTS artifacts (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                run_id INTEGER NOT NULL,
                name TEXT NOT NULL,
                path TEXT NOT NULL,
                sha256 TEXT,
                created_at TIMESTAMP DEFAULT CURRENT_TIMESTAMP,
                FOREIGN KEY (run_id) REFERENCES runs(id)
            )
        """)

        cursor.execute("""
            CREATE TABLE IF NOT EXISTS solutions (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                run_id INTEGER NOT NULL,
                p REAL NOT NULL,
                g_star TEXT,
                a TEXT,
                verdict TEXT,
                location TEXT,
                pi_hat_json TEXT,
                created_at TIMESTAMP DEFAULT CURRENT_TIMESTAMP,
                FOREIGN KEY (run_id) REFERENCES runs(id)
            )
        """)

        cursor.execute("""
            CREATE TABLE IF NOT EXISTS estimates (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                run_id INTEGER NOT NULL,
                label TEXT NOT NULL,
                mean REAL,
                se REAL,
                n_paths INTEGER,
                absorbed INTEGER DEFAULT 0,
                created_at TIMESTAMP DEFAULT CURRENT_TIMESTAMP,
                FOREIGN KEY (run_id) REFERENCES runs(id)
            )
        """)

        cursor.execute("""
            CREATE INDEX IF NOT EXISTS idx_runs_started
            ON runs(started_at DESC)
        """)
        cursor.execute("""
            CREATE INDEX IF NOT EXISTS idx_artifacts_run
            ON artifacts(run_id)
        """)

        self.conn.commit()

    def start_run(self, run: Dict[str, Any]) -> int:
        """
        Insert a run in RUNNING state.

        Args:
            run: Mapping with subcommand, model_name, model_sha256, seed, output_dir

        Returns:
            Run ID
        """
        cursor = self.conn.cursor()
        cursor.execute("""
            INSERT INTO runs (subcommand, model_name, model_sha256, seed, output_dir)
            VALUES (?, ?, ?, ?, ?)
        """, (
            run['subcommand'],
            run.get('model_name'),
            run.get('model_sha256'),
            run.get('seed'),
            run.get('output_dir'),
        ))
        self.conn.commit()
        return cursor.lastrowid

    def finish_run(self, run_id: int, exit_code: int, message: str = ""):
        status = 'OK' if exit_code == 0 else 'FAILED'
        cursor = self.conn.cursor()
        cursor.execute("""
            UPDATE runs SET status = ?, exit_code = ?, message = ?, finished_at = CURRENT_TIMESTAMP
            WHERE id = ?
        """, (status, exit_code, message, run_id))
        self.conn.commit()

    def save_artifact(self, run_id: int, name: str, path: str, sha256: Optional[str] = None) -> int:
        cursor = self.conn.cursor()
        cursor.execute("""
            INSERT INTO artifacts (run_id, name, path, sha256) VALUES (?, ?, ?, ?)
        """, (run_id, name, path, sha256))
        self.conn.commit()
        return cursor.lastrowid

    def save_solution(self, run_id: int, solution: Dict[str, Any]) -> int:
        """
        Save a serialized PortfolioSolution.

        Args:
            run_id: Run ID
            solution: PortfolioSolution.to_dict() output

        Returns:
            Row ID
        """
        cursor = self.conn.cursor()
        cursor.execute("""
            INSERT INTO solutions (run_id, p, g_star, a, verdict, location, pi_hat_json)
            VALUES (?, ?, ?, ?, ?, ?, ?)
        """, (
            run_id,
            solution['p'],
            str(solution.get('g_star')),
            str(solution.get('a')),
            solution.get('verdict'),
            solution.get('location'),
            json.dumps(solution.get('pi_hat')),
        ))
        self.conn.commit()
        return cursor.lastrowid

    def save_estimate(self, run_id: int, label: str, estimate: Dict[str, Any]) -> int:
        cursor = self.conn.cursor()
        cursor.execute("""
            INSERT INTO estimates (run_id, label, mean, se, n_paths, absorbed)
            VALUES (?, ?, ?, ?, ?, ?)
        """, (
            run_id,
            label,
            estimate.get('mean'),
            estimate.get('se'),
            estimate.get('n_paths'),
            estimate.get('absorbed', 0),
        ))
        self.conn.commit()
        return cursor.lastrowid

    def get_run(self, run_id: int) -> Optional[Dict]:
        cursor = self.conn.cursor()
        cursor.execute("SELECT * FROM runs WHERE id = ?", (run_id,))
        row = cursor.fetchone()
        return dict(row) if row else None

    def get_runs(self, limit: int = 20) -> List[Dict]:
        """Most recent runs first."""
        cursor = self.conn.cursor()
        cursor.execute("SELECT * FROM runs ORDER BY id DESC LIMIT ?", (limit,))
        return [dict(row) for row in cursor.fetchall()]

    def get_artifacts(self, run_id: int) -> List[Dict]:
        cursor = self.conn.cursor()
        cursor.execute("SELECT * FROM artifacts WHERE run_id = ? ORDER BY id", (run_id,))
        return [dict(row) for row in cursor.fetchall()]

    def get_solutions(self, run_id: int) -> List[Dict]:
        cursor = self.conn.cursor()
        cursor.execute("SELECT * FROM solutions WHERE run_id = ? ORDER BY id", (run_id,))
        return [dict(row) for row in cursor.fetchall()]

    def close(self):
        """Close database connection."""
        if self.conn:
            self.conn.close()
            logger.debug("Run ledger closed")
