/** Provenance inspection: renders a recorded run as the path data took
 * through the app, with per-node input/output summaries. */

import { Session } from "./client.js";

export interface TraceEntryView {
  node_id: string;
  input: string;
  output: string;
  time: number;
}

export interface FlowPathStep {
  nodeId: string;
  /** e.g. "120 rows -> mean 131.2" */
  summary: string;
  time: number;
}

export async function listRuns(
  session: Session,
  appId: string,
): Promise<string[]> {
  const body = await session.request("GET", `/apps/${appId}/runs`);
  return body.runs as string[];
}

export async function inspectRun(
  session: Session,
  appId: string,
  runId: string,
): Promise<FlowPathStep[]> {
  const body = await session.request("GET", `/apps/${appId}/runs/${runId}`);
  const entries = body.entries as unknown as TraceEntryView[];
  return entries.map((e) => ({
    nodeId: e.node_id,
    summary: `${e.input} -> ${e.output}`,
    time: e.time,
  }));
}
