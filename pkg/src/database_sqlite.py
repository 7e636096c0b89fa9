import logging
import os
import sqlite3

logger = logging.getLogger(__name__)

# Database path
DATABASE_PATH = os.getenv('HYPRAD_DATABASE', os.path.join('out', 'runs.db'))


def use_database(path):
    """Point the ledger at another sqlite file and make sure its tables exist"""
    global DATABASE_PATH
    DATABASE_PATH = path
    init_db()


def get_db_connection():
    """Get database connection"""
    directory = os.path.dirname(DATABASE_PATH)
    if directory:
        os.makedirs(directory, exist_ok=True)
    return sqlite3.connect(DATABASE_PATH)


def init_db():
    """Initialize database with tables"""
    conn = get_db_connection()
    cursor = conn.cursor()

    try:
        # One row per command invocation
        cursor.execute('''
            CREATE TABLE IF NOT EXISTS runs (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                command TEXT NOT NULL,
                config_json TEXT NOT NULL,
                domain_kind TEXT,
                n INTEGER,
                status TEXT NOT NULL DEFAULT 'running',
                exit_code INTEGER,
                summary_json TEXT,
                created_at TIMESTAMP DEFAULT CURRENT_TIMESTAMP
            )
        ''')

        # Per-suite verification outcomes
        cursor.execute('''
            CREATE TABLE IF NOT EXISTS check_results (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                run_id INTEGER NOT NULL,
                check_name TEXT NOT NULL,
                status TEXT NOT NULL,
                samples INTEGER,
                violations INTEGER,
                worst_margin REAL,
                payload_json TEXT,
                created_at TIMESTAMP DEFAULT CURRENT_TIMESTAMP,
                FOREIGN KEY (run_id) REFERENCES runs (id)
            )
        ''')

        conn.commit()
        logger.debug('run ledger ready at %s', DATABASE_PATH)

    except sqlite3.Error as e:
        logger.error('error initializing database: %s', e)
        conn.rollback()
        raise
    finally:
        conn.close()


if __name__ == "__main__":
    init_db()
