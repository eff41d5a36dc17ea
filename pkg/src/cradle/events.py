"""Event kinds shared by the loop, session store, service, and UI.

The set is closed: every event written to events.jsonl carries one of these
kinds, and consumers may rely on never seeing anything else.
"""

USER_MESSAGE = "UserMessage"
AGENT_MESSAGE = "AgentMessage"
PLAN_CREATED = "PlanCreated"
CANDIDATE_PRODUCED = "CandidateProduced"
VERIFICATION_RESULT = "VerificationResult"
METRICS_MEASURED = "MetricsMeasured"
BEST_UPDATED = "BestUpdated"
LOOP_FINISHED = "LoopFinished"
ERROR = "Error"

KINDS = (
    USER_MESSAGE,
    AGENT_MESSAGE,
    PLAN_CREATED,
    CANDIDATE_PRODUCED,
    VERIFICATION_RESULT,
    METRICS_MEASURED,
    BEST_UPDATED,
    LOOP_FINISHED,
    ERROR,
)
