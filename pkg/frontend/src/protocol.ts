/** Wire protocol types shared by every dashboard module.
 *
 * Framing is one JSON object per line over a local TCP socket:
 *   request:  {v: 1, id, method, path, auth, body}
 *   response: {v: 1, id, status, body}
 *   push:     {v: 1, event}           (after {v: 1, subscribe: true})
 */

export const PROTOCOL_VERSION = 1;

export type Json =
  | null
  | boolean
  | number
  | string
  | Json[]
  | { [key: string]: Json };

export interface Request {
  method: string;
  path: string;
  auth?: { session?: string; token?: string };
  body?: Record<string, Json>;
}

export interface Response {
  status: number;
  body: Record<string, Json>;
}

export interface PushEvent {
  type: string;
  [key: string]: Json | undefined;
}

export interface NotificationView {
  notif_id: string;
  user_id: string;
  kind: string;
  payload: Record<string, Json>;
  created: number;
  acknowledged: boolean;
}

export interface ExportItemView {
  item_id: string;
  app_id: string;
  recipient: string;
  payload: Record<string, Json>;
  staged_at: number;
  state: "staged" | "approved" | "denied" | "dispatched";
}

export class GatewayError extends Error {
  constructor(
    readonly status: number,
    readonly body: Record<string, Json>,
  ) {
    super(`gateway ${status}: ${JSON.stringify(body)}`);
  }
}

/** Deterministic serialization: keys sorted, no whitespace. Matches the
 * platform's receipt serialization byte for byte on the same tree. */
export function canonicalJson(value: Json): string {
  if (value === null || typeof value !== "object") {
    return JSON.stringify(value);
  }
  if (Array.isArray(value)) {
    return "[" + value.map(canonicalJson).join(",") + "]";
  }
  const keys = Object.keys(value).sort();
  const parts = keys.map(
    (k) => JSON.stringify(k) + ":" + canonicalJson(value[k]),
  );
  return "{" + parts.join(",") + "}";
}
