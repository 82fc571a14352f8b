/** Export preview queue and the notification badge that tracks it.
 *
 * The queue is pure client state refreshed from the gateway; decisions go
 * straight back to the server, which is the source of truth for outcomes.
 */

import { ExportItemView, Json, NotificationView, PushEvent } from "./protocol.js";
import { Session } from "./client.js";

export class NotificationFeed {
  private items = new Map<string, NotificationView>();

  constructor(private readonly session: Session) {}

  async refresh(): Promise<void> {
    const body = await this.session.request("GET", "/notifications");
    this.items.clear();
    for (const n of body.notifications as unknown as NotificationView[]) {
      this.items.set(n.notif_id, n);
    }
  }

  /** Feed push frames here to stay live without polling. */
  onEvent(event: PushEvent): void {
    if (event.type === "notification" && event.user_id === this.session.userId) {
      const n = event as unknown as NotificationView;
      this.items.set(n.notif_id, n);
    }
  }

  /** Unacknowledged count, the number shown on the bell. */
  badge(kind?: string): number {
    let count = 0;
    for (const n of this.items.values()) {
      if (!n.acknowledged && (kind === undefined || n.kind === kind)) count++;
    }
    return count;
  }

  list(kind?: string): NotificationView[] {
    return [...this.items.values()]
      .filter((n) => kind === undefined || n.kind === kind)
      .sort((a, b) => a.created - b.created);
  }

  async acknowledge(notifId: string): Promise<void> {
    const body = await this.session.request(
      "POST",
      `/notifications/${notifId}/ack`,
    );
    this.items.set(notifId, body as unknown as NotificationView);
  }
}

export class ExportQueue {
  staged: ExportItemView[] = [];

  constructor(private readonly session: Session) {}

  async refresh(): Promise<void> {
    const body = await this.session.request("GET", "/exports", {
      state: "staged",
    });
    this.staged = body.exports as unknown as ExportItemView[];
  }

  /** The payload shown to the user is exactly what would leave the box. */
  previewOf(itemId: string): Record<string, Json> | null {
    const item = this.staged.find((i) => i.item_id === itemId);
    return item ? item.payload : null;
  }

  async decide(itemId: string, decision: "approve" | "deny"): Promise<void> {
    await this.session.request("POST", `/exports/${itemId}/decide`, {
      decision,
    });
    await this.refresh();
  }

  async receipts(): Promise<Record<string, Json>[]> {
    const body = await this.session.request("GET", "/receipts");
    return body.receipts as Record<string, Json>[];
  }
}
