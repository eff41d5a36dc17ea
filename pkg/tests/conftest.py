import queue
import shutil
import threading
from pathlib import Path

import pytest

from cradle.llm import ChatResponse, ScriptExhausted, UsageTally
from cradle.model import (
    DesignUnit,
    ResourceMetrics,
    VerdictStatus,
    VerificationVerdict,
)

REPO = Path(__file__).resolve().parents[1]
FIXTURES = REPO / "fixtures"
REPLAY_DIR = FIXTURES / "replay"


@pytest.fixture
def ws(tmp_path):
    """Throwaway copy of the bundled fixture workspace."""
    dest = tmp_path / "ws"
    shutil.copytree(FIXTURES / "workspace", dest)
    return dest


@pytest.fixture
def replay_dir():
    return REPLAY_DIR


def metrics(lut=0, ff=0, **extra):
    counts = {"LUT": lut, "FF": ff}
    counts.update(extra)
    return ResourceMetrics(counts)


def passing(excerpt="ok"):
    return VerificationVerdict(VerdictStatus.PASS, log_excerpt=excerpt)


def failing(status=VerdictStatus.SIM_FAIL, rule=None, excerpt="boom"):
    return VerificationVerdict(status, log_excerpt=excerpt, matched_rule=rule)


SIMPLE_SRC = """\
module top (
    input  wire clk,
    input  wire rst,
    output reg [3:0] q
);
    always @(posedge clk) begin
        if (rst) q <= 4'd0;
        else q <= q + 4'd1;
    end
endmodule
"""

SIMPLE_TB = """\
module tb_top;
    reg clk = 0, rst = 1;
    wire [3:0] q;
    top dut (.clk(clk), .rst(rst), .q(q));
    initial begin
        $display("all tests passed");
        $finish;
    end
endmodule
"""


def make_design(name="widget", src=SIMPLE_SRC, tb=SIMPLE_TB, top="top",
                reference_metrics=None):
    return DesignUnit(
        name=name,
        source_files=((f"src/{top}.v", src),),
        top_module=top,
        testbench_files=(("tb/tb.v", tb),),
        reference_metrics=reference_metrics,
    )


class FakeGateway:
    """Gateway stand-in: replies consumed in order, calls recorded.

    A reply may be a string (returned as the response text) or an exception
    instance (raised).
    """

    def __init__(self, replies):
        self.replies = list(replies)
        self.calls = []
        self.usage = UsageTally()
        self._lock = threading.Lock()

    def complete(self, label, messages, max_tokens=None):
        with self._lock:
            self.calls.append((label, tuple(messages)))
            if not self.replies:
                raise ScriptExhausted(f"no reply staged for call {len(self.calls)}")
            reply = self.replies.pop(0)
            if isinstance(reply, Exception):
                raise reply
            self.usage.calls += 1
            return ChatResponse(text=reply)


class StubAdapters:
    """Tool adapter stand-in with programmable outcomes.

    sim_results/measure_results are consumed per call; an exception instance
    is raised, anything else returned. When a list runs dry the last value
    repeats.
    """

    def __init__(self, sim_results=None, measure_results=None):
        self.sim_results = list(sim_results or [passing()])
        self.measure_results = list(measure_results or [metrics(10, 5)])
        self.sim_calls = []
        self.measure_calls = []

    @staticmethod
    def _next(results, calls):
        item = results.pop(0) if len(results) > 1 else results[0]
        if isinstance(item, Exception):
            raise item
        return item

    def simulate(self, sources, testbench_files, cancel=None):
        self.sim_calls.append(tuple(sources))
        return self._next(self.sim_results, self.sim_calls)

    def measure(self, sources, top, cancel=None):
        self.measure_calls.append((tuple(sources), top))
        return self._next(self.measure_results, self.measure_calls)


PLAN_REPLY = (
    "STEP 1: Merge the reset and increment muxes.\n"
    "STEP 2: Use the carry chain for the increment.\n"
    "RATIONALE: Fewer muxes means fewer lookup tables.\n"
    "CONTINUE"
)

STOP_REPLY = "RATIONALE: Nothing left to shave off.\nNO_FURTHER_OPTIMIZATION"


def rewrite_reply(source):
    return f"Here is the rewritten design.\n\n```verilog\n{source}```"
