/** One-interaction stop controls: terminate an app, withdraw consent.
 * Each asks for confirmation before doing anything irreversible. */

import { Json } from "./protocol.js";
import { Session } from "./client.js";

export type Confirm = (message: string) => boolean | Promise<boolean>;

export class PanicControls {
  constructor(
    private readonly session: Session,
    private readonly confirm: Confirm,
  ) {}

  /** Stops the app, denies anything staged, revokes its access. */
  async terminateApp(appId: string): Promise<Record<string, Json> | null> {
    if (!(await this.confirm(`Terminate ${appId}? Staged exports are denied.`)))
      return null;
    return this.session.request("POST", `/apps/${appId}/terminate`);
  }

  /** Withdraws the agreement: processing stops within one tick. */
  async withdrawConsent(slaId: string): Promise<Record<string, Json> | null> {
    if (!(await this.confirm(`Withdraw consent for ${slaId}?`))) return null;
    return this.session.request("POST", `/slas/${slaId}/withdraw`);
  }
}
