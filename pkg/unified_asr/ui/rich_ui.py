"""
Rich UI Implementation
Terminal reporter implementation using the Rich library.
"""

from typing import Any, Dict, List, Optional, Sequence

from rich.console import Console, Group
from rich.panel import Panel
from rich.progress import BarColumn, Progress, SpinnerColumn, TaskID, TextColumn, TimeElapsedColumn
from rich.table import Table
from rich.text import Text
from rich import box

from ..interfaces.ui_interface import UIInterface
from ..common import LIME_PRIMARY, LIME_SECONDARY, LIME_ACCENT
from ..common import MAT_PRIMARY, MAT_ACCENT, MAT_TEXT_HINT, MAT_ERROR
from ..common import VERSION

# Initialize Rich console
console = Console()


def _cell(value: Any) -> str:
    if isinstance(value, float):
        return f"{value:.4f}"
    if value is None:
        return "-"
    return str(value)


class RichUI(UIInterface):
    """Rich-based user interface implementation"""

    def __init__(self, console_override: Optional[Console] = None):
        self.console = console_override or console
        self._progress: Optional[Progress] = None
        self._task: Optional[TaskID] = None

    def initialize(self) -> bool:
        """Initialize the UI system"""
        try:
            # Test console capabilities
            self.console.print("", end="")
            return True
        except Exception:
            return False

    def cleanup(self):
        """Clean up UI resources"""
        if self._progress:
            self.hide_progress()

    def show_header(self, command: str):
        """Display the command banner"""
        header_content = Group(
            Text("UNIFIED ASR", style=f"bold {LIME_PRIMARY}", justify="center"),
            Text(f"{command} • v{VERSION}", style=LIME_SECONDARY, justify="center"),
        )
        self.console.print(Panel(header_content, border_style=LIME_PRIMARY, padding=(0, 2)))

    def show_error(self, message: str):
        """Display error message"""
        self.console.print(f"[{MAT_ERROR}]❌ {message}[/]")

    def show_success(self, message: str):
        """Display success message"""
        self.console.print(f"[{LIME_PRIMARY}]✅ {message}[/]")

    def show_info(self, message: str):
        """Display informational message"""
        self.console.print(f"[{LIME_SECONDARY}]ℹ️ {message}[/]")

    def show_progress(self, message: str, progress: float = -1):
        """Show progress bar; the first call starts it, later calls move it"""
        if self._progress is None:
            self._progress = Progress(
                SpinnerColumn(style=LIME_ACCENT),
                TextColumn(f"[{LIME_SECONDARY}]{{task.description}}"),
                BarColumn(complete_style=LIME_PRIMARY, finished_style=MAT_PRIMARY),
                TextColumn("{task.percentage:>5.1f}%"),
                TimeElapsedColumn(),
                console=self.console,
                transient=True,
            )
            self._progress.start()
            self._task = self._progress.add_task(message, total=100.0 if progress >= 0 else None)
        if progress >= 0:
            self._progress.update(self._task, description=message, completed=min(progress, 100.0), total=100.0)
        else:
            self._progress.update(self._task, description=message)

    def hide_progress(self):
        """Hide progress indicator"""
        if self._progress is not None:
            self._progress.stop()
        self._progress = None
        self._task = None

    def show_table(self, title: str, columns: List[str], rows: Sequence[Sequence[Any]]):
        """Display tabular results"""
        table = Table(title=title, box=box.ROUNDED, border_style=MAT_ACCENT, title_style=f"bold {MAT_PRIMARY}")
        for index, column in enumerate(columns):
            table.add_column(column, justify="left" if index == 0 else "right",
                             style="white" if index == 0 else LIME_SECONDARY)
        for row in rows:
            table.add_row(*(_cell(v) for v in row))
        self.console.print(table)

    def show_summary(self, title: str, items: Dict[str, Any]):
        """Display key/value summary of a finished command"""
        lines = [
            Text.assemble((f"{key}: ", MAT_TEXT_HINT), (_cell(value), "white"))
            for key, value in items.items()
        ]
        self.console.print(Panel(Group(*lines), title=title, title_align="left",
                                 border_style=LIME_PRIMARY, padding=(0, 1)))
