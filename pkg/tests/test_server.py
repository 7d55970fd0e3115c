import asyncio
import json
import math
import numpy as np
import unittest
from mcp import types
from mcp.shared.message import ClientMessageMetadata
from mcp.shared.session import RequestResponder
from reboot.aio.tests import Reboot
from reboot.decay.server import application
from reboot.mcp.client import connect, reconnect

SIMULATE_SUMMARY = types.ClientRequest(
    types.CallToolRequest(
        method="tools/call",
        params=types.CallToolRequestParams(
            name="simulate_summary",
            arguments={
                "arrival_rate": 0.5,
                "service": "exp:1.0",
                "discipline": "fb",
                "customers": 20_000,
                "seed": 3,
            },
        ),
    ),
)


def _content(result) -> dict:
    (text,) = result.content
    return json.loads(text.text)


def _rows(result) -> list[dict]:
    # A list result comes back as one item per row or as one array.
    rows = [json.loads(text.text) for text in result.content]
    if len(rows) == 1 and isinstance(rows[0], list):
        return rows[0]
    return rows


class TestServer(unittest.IsolatedAsyncioTestCase):

    async def asyncSetUp(self) -> None:
        self.rbt = Reboot()
        await self.rbt.start()

    async def asyncTearDown(self) -> None:
        await self.rbt.stop()

    async def test_tools(self) -> None:
        revision = await self.rbt.up(application)

        async with connect(
            self.rbt.url() + "/mcp",
            terminate_on_close=False,
        ) as (session, session_id, protocol_version):
            tools = await session.list_tools()
            self.assertEqual(
                {tool.name for tool in tools.tools},
                {
                    "analytic",
                    "simulate_summary",
                    "estimate",
                    "compare",
                    "validate",
                },
            )

            result = await session.call_tool(
                "analytic",
                arguments={"arrival_rate": 0.5, "service": "exp:1.0"},
            )
            self.assertFalse(result.isError)
            self.assertAlmostEqual(
                _content(result)["c"],
                (1 - math.sqrt(0.5))**2,
                places=9,
            )

            result = await session.call_tool(
                "analytic",
                arguments={"arrival_rate": 2.0, "service": "exp:1.0"},
            )
            self.assertTrue(result.isError)

        await self.rbt.down()
        await self.rbt.up(revision=revision)

        async with reconnect(
            self.rbt.url() + "/mcp",
            session_id=session_id,
            protocol_version=protocol_version,
            next_request_id=session._request_id,
        ) as session:
            result = await session.call_tool(
                "simulate_summary",
                arguments={
                    "arrival_rate": 0.5,
                    "service": "exp:1.0",
                    "discipline": "fb",
                    "customers": 2_000,
                    "seed": 3,
                },
            )
            self.assertFalse(result.isError)
            summary = _content(result)
            self.assertEqual(summary["discipline"], "fb")
            self.assertGreater(summary["busy_periods"], 0)

    async def test_estimate_compare_validate(self) -> None:
        await self.rbt.up(application)

        async with connect(self.rbt.url() + "/mcp") as (
            session, session_id, protocol_version
        ):
            samples = np.random.default_rng(1).exponential(1.0, 5_000)
            result = await session.call_tool(
                "estimate",
                arguments={"samples": samples.tolist()},
            )
            self.assertFalse(result.isError)
            estimate = _content(result)
            rate = estimate["estimate"]["rate"]
            self.assertAlmostEqual(rate, 1.0, delta=0.25)
            low, high = estimate["confidence_interval"]
            self.assertLess(low, rate)
            self.assertLess(rate, high)

            result = await session.call_tool(
                "estimate",
                arguments={
                    "samples": samples.tolist(),
                    "correction": "cubic",
                },
            )
            self.assertTrue(result.isError)

            result = await session.call_tool(
                "compare",
                arguments={
                    "arrival_rate": 0.5,
                    "service": "exp:1.0",
                    "customers": 20_000,
                    "seed": 1,
                },
            )
            self.assertFalse(result.isError)
            rows = {row["discipline"]: row for row in _rows(result)}
            self.assertEqual(set(rows), {"fb", "fifo", "lifo", "ps"})
            self.assertEqual(rows["fb"]["analytic"], rows["lifo"]["analytic"])
            self.assertIsNone(rows["ps"]["analytic"])
            self.assertEqual(
                rows["fb"]["estimate"]["correction"],
                "polynomial",
            )

            result = await session.call_tool(
                "validate",
                arguments={
                    "check": "d-decomp",
                    "arrival_rate": 0.5,
                    "service": "exp:1.0",
                    "samples": 2_000,
                },
            )
            self.assertFalse(result.isError)
            verdict = _content(result)
            self.assertEqual(verdict["check"], "d-decomp")
            self.assertIsInstance(verdict["passed"], bool)
            self.assertIn("ks", verdict["report"])

    async def test_simulation_survives_reboot(self) -> None:
        revision = await self.rbt.up(application)

        simulated_run_ids: list[str] = []
        simulated_event = asyncio.Event()

        async def message_handler(
            message: RequestResponder[
                types.ServerRequest, types.ClientResult
            ] | types.ServerNotification | Exception,
        ) -> None:
            if isinstance(message, types.ServerNotification):
                if isinstance(message.root, types.LoggingMessageNotification):
                    data = str(message.root.params.data)
                    if data.startswith("Simulated"):
                        simulated_run_ids.append(
                            data.removesuffix(")").split("(run ")[1]
                        )
                        simulated_event.set()

        last_event_id = None

        async with connect(
            self.rbt.url() + "/mcp",
            terminate_on_close=False,
            message_handler=message_handler,
        ) as (session, session_id, protocol_version):

            async def on_resumption_token_update(token: str) -> None:
                nonlocal last_event_id
                last_event_id = token

            send_request_task = asyncio.create_task(
                session.send_request(
                    SIMULATE_SUMMARY,
                    types.CallToolResult,
                    metadata=ClientMessageMetadata(
                        on_resumption_token_update=on_resumption_token_update,
                    ),
                )
            )

            await simulated_event.wait()

            while last_event_id is None:
                await asyncio.sleep(0.01)

            # Drop the call before its result is read.
            send_request_task.cancel()
            try:
                await send_request_task
            except:
                pass

        await self.rbt.down()
        await self.rbt.up(revision=revision)

        async with reconnect(
            self.rbt.url() + "/mcp",
            session_id=session_id,
            protocol_version=protocol_version,
            # Continue with the session's next request ID.
            next_request_id=session._request_id,
        ) as session:
            assert last_event_id is not None

            result = await session.send_request(
                SIMULATE_SUMMARY,
                types.CallToolResult,
                metadata=ClientMessageMetadata(
                    resumption_token=last_event_id,
                ),
            )

            self.assertFalse(result.isError)
            summary = _content(result)
            # The simulation ran once; the retried call got its result.
            self.assertEqual(summary["run_id"], simulated_run_ids[0])
            self.assertEqual(summary["discipline"], "fb")
            self.assertGreater(summary["customers_recorded"], 0)


if __name__ == '__main__':
    unittest.main()
