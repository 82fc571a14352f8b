"""The platform's single external surface.

Every mutating route requires either an authenticated user session (people)
or a valid access token (apps/processors); the two auth classes are disjoint
by construction: a session can never invoke token routes and vice versa.

Requests and responses are plain dicts so the same dispatch serves the
in-process client, the socket server, and the CLI identically::

    request  = {"method": "POST", "path": "/apps/x/install",
                "auth": {"session": sid} | {"token": wire}, "body": {...}}
    response = {"status": 200, "body": {...}}
"""

from __future__ import annotations

from .errors import (
    AuthorizationError,
    DataboxError,
    DuplicateError,
    NotFoundError,
    TokenDeniedError,
    ValidationError,
)
from .platform import Platform
from .stores import QuerySpec


class Gateway:
    def __init__(self, platform: Platform):
        self.platform = platform
        self.sessions: dict[str, str] = {}  # session id -> user_id
        self._session_count = 0
        # (method, path template) -> (auth class, handler). Templates use
        # ``{x}`` placeholders matched segment-wise.
        self.routes = {
            ("POST", "/session"): ("none", self._login),
            ("GET", "/accounts"): ("session", self._list_accounts),
            ("POST", "/accounts"): ("session", self._create_account),
            ("GET", "/stores"): ("session", self._list_stores),
            ("POST", "/sources"): ("session", self._add_source),
            ("POST", "/drivers"): ("session", self._start_driver),
            ("POST", "/drivers/stop"): ("session", self._stop_driver),
            ("POST", "/stores/{id}/query"): ("token", self._query),
            ("POST", "/stores/{id}/actuate"): ("token", self._actuate),
            ("POST", "/stores/{id}/manage"): ("session", self._manage),
            ("POST", "/stores/{id}/approve-delete"): ("session", self._approve_delete),
            ("GET", "/stores/{id}/audit"): ("session", self._audit),
            ("GET", "/apps"): ("session", self._search),
            ("GET", "/apps/recommend"): ("session", self._recommend),
            ("POST", "/apps/publish"): ("session", self._publish),
            ("GET", "/apps/{id}"): ("session", self._listing),
            ("POST", "/apps/{id}/rate"): ("session", self._rate),
            ("POST", "/apps/{id}/install"): ("session", self._install),
            ("POST", "/apps/{id}/terminate"): ("session", self._terminate),
            ("GET", "/apps/{id}/runs"): ("session", self._runs),
            ("GET", "/apps/{id}/runs/{run}"): ("session", self._inspect),
            ("GET", "/slas/{id}/receipt"): ("session", self._receipt),
            ("POST", "/slas/{id}/withdraw"): ("session", self._withdraw),
            ("GET", "/exports"): ("session", self._exports),
            ("POST", "/exports/{id}/decide"): ("session", self._decide_export),
            ("GET", "/notifications"): ("session", self._notifications),
            ("POST", "/notifications/{id}/ack"): ("session", self._ack),
            ("POST", "/tick"): ("session", self._tick),
            ("GET", "/receipts"): ("session", self._receipts),
            ("GET", "/events"): ("session", self._events),
            ("GET", "/audit-dump"): ("session", self._audit_dump),
        }

    # -- dispatch ------------------------------------------------------

    def api_dispatch(self, request: dict) -> dict:
        method = request.get("method", "GET")
        path = request.get("path", "")
        auth = request.get("auth") or {}
        body = request.get("body") or {}
        match = self._match(method, path)
        if match is None:
            return {"status": 404, "body": {"error": "NO-ROUTE", "path": path}}
        auth_class, handler, params = match
        try:
            ctx = self._authenticate(auth_class, auth)
            result = handler(ctx, params, body)
            return {"status": 200, "body": result}
        except TokenDeniedError as exc:
            return {"status": 403, "body": {"error": exc.code, "reason": exc.reason}}
        except AuthorizationError as exc:
            status = 401 if exc.code == "NO-AUTH" else 403
            return {"status": status, "body": {"error": exc.code, "message": str(exc)}}
        except NotFoundError as exc:
            return {"status": 404, "body": {"error": exc.code, "message": str(exc)}}
        except DuplicateError as exc:
            return {"status": 409, "body": {"error": exc.code, "message": str(exc)}}
        except ValidationError as exc:
            return {"status": 400, "body": {"error": exc.code,
                                            "violations": exc.violations}}
        except DataboxError as exc:
            return {"status": 400, "body": {"error": exc.code, "message": str(exc)}}

    def _match(self, method: str, path: str):
        segs = [s for s in path.split("/") if s]
        for (m, template), (auth_class, handler) in self.routes.items():
            if m != method:
                continue
            tsegs = [s for s in template.split("/") if s]
            if len(tsegs) != len(segs):
                continue
            params = {}
            for t, s in zip(tsegs, segs):
                if t.startswith("{"):
                    params[t[1:-1]] = s
                elif t != s:
                    break
            else:
                return auth_class, handler, params
        return None

    def _authenticate(self, auth_class: str, auth: dict) -> dict:
        if auth_class == "none":
            return {}
        if auth_class == "session":
            if "token" in auth:
                raise AuthorizationError(
                    "tokens cannot invoke user routes", code="TOKEN-ON-USER-ROUTE")
            sid = auth.get("session")
            if sid is None:
                raise AuthorizationError("authentication required", code="NO-AUTH")
            user_id = self.sessions.get(sid)
            if user_id is None:
                raise AuthorizationError("invalid session", code="BAD-SESSION")
            return {"user_id": user_id}
        if auth_class == "token":
            if "session" in auth:
                raise AuthorizationError(
                    "sessions cannot invoke store data routes",
                    code="SESSION-ON-TOKEN-ROUTE")
            wire = auth.get("token")
            if wire is None:
                raise AuthorizationError("token required", code="NO-AUTH")
            return {"token": wire}
        raise DataboxError(f"unknown auth class {auth_class!r}")

    # -- handlers ------------------------------------------------------

    def _login(self, ctx, params, body):
        user = self.platform.require_account(body["user_id"])
        self._session_count += 1
        sid = f"sess-{self._session_count}"
        self.sessions[sid] = user.user_id
        return {"session": sid, "user_id": user.user_id, "role": user.role}

    def _list_accounts(self, ctx, params, body):
        return {"accounts": [
            {"user_id": a.user_id, "name": a.name, "role": a.role}
            for a in self.platform.accounts.values()]}

    def _create_account(self, ctx, params, body):
        user_id = self.platform.create_account(body["name"], body["role"],
                                               caller=ctx["user_id"])
        return {"user_id": user_id}

    def _list_stores(self, ctx, params, body):
        return {"stores": self.platform.stores.list_stores()}

    def _add_source(self, ctx, params, body):
        self._require_owner(ctx)
        store_id = self.platform.add_source(
            body["kind"], body.get("label", ""), body["owner_ids"],
            source_id=body.get("source_id"))
        return {"store_id": store_id}

    def _start_driver(self, ctx, params, body):
        self._require_owner(ctx)
        drv = self.platform.start_driver(
            body["source_id"], body.get("seed", 0),
            cadence_ms=body.get("cadence_ms", 10_000), params=body.get("params"))
        return {"source_id": body["source_id"], "store_id": drv.store_id}

    def _stop_driver(self, ctx, params, body):
        self._require_owner(ctx)
        self.platform.drivers.stop(body["source_id"])
        return {"stopped": body["source_id"]}

    def _require_owner(self, ctx):
        if self.platform.require_account(ctx["user_id"]).role != "owner":
            raise AuthorizationError("owner role required", code="OWNER-REQUIRED")

    def _query(self, ctx, params, body):
        spec = QuerySpec.from_dict(body["spec"])
        rows = self.platform.stores.query(params["id"], ctx["token"], spec)
        return {"result": rows}

    def _actuate(self, ctx, params, body):
        return self.platform.stores.actuate(params["id"], ctx["token"],
                                            body.get("command", {}))

    def _manage(self, ctx, params, body):
        return self.platform.stores.manage_store(
            params["id"], body["op"], ctx["user_id"], t_range=body.get("range"))

    def _approve_delete(self, ctx, params, body):
        return self.platform.stores.approve_delete(params["id"], ctx["user_id"])

    def _audit(self, ctx, params, body):
        recs = self.platform.stores.read_audit(
            params["id"], ctx["user_id"], t_range=body.get("range"))
        return {"audit": [r.to_dict() for r in recs]}

    def _search(self, ctx, params, body):
        listings = self.platform.appstore.search(
            source_kinds=body.get("source_kinds"),
            max_risk=body.get("max_risk"),
            accredited_only=body.get("accredited_only", False))
        return {"listings": [l.to_dict() for l in listings]}

    def _recommend(self, ctx, params, body):
        available = self.platform.available_kinds()
        return {"listings": [l.to_dict()
                             for l in self.platform.appstore.recommend(available)]}

    def _publish(self, ctx, params, body):
        listing = self.platform.appstore.publish(body["package"])
        return listing.to_dict()

    def _listing(self, ctx, params, body):
        return self.platform.appstore.get(params["id"]).to_dict()

    def _rate(self, ctx, params, body):
        return self.platform.appstore.rate(params["id"], ctx["user_id"], body["stars"])

    def _install(self, ctx, params, body):
        sla = self.platform.install_app(params["id"], ctx["user_id"], body["choices"])
        return {"sla": sla.to_dict()}

    def _terminate(self, ctx, params, body):
        return self.platform.runtime.terminate(params["id"])

    def _runs(self, ctx, params, body):
        return {"runs": self.platform.runtime.runs(params["id"])}

    def _inspect(self, ctx, params, body):
        trace = self.platform.runtime.inspect(params["id"], params["run"])
        return trace.to_dict()

    def _receipt(self, ctx, params, body):
        return self.platform.manifests.receipt(params["id"])

    def _withdraw(self, ctx, params, body):
        return self.platform.manifests.withdraw(params["id"])

    def _exports(self, ctx, params, body):
        items = self.platform.runtime.exports.values()
        state = body.get("state")
        if state:
            items = [i for i in items if i.state == state]
        return {"exports": [
            {"item_id": i.item_id, "app_id": i.app_id, "recipient": i.recipient,
             "payload": i.payload, "staged_at": i.staged_at, "state": i.state}
            for i in items]}

    def _decide_export(self, ctx, params, body):
        return self.platform.runtime.decide_export(
            params["id"], body["decision"], ctx["user_id"])

    def _notifications(self, ctx, params, body):
        return {"notifications": self.platform.notifications_for(
            ctx["user_id"], unacknowledged_only=body.get("unacknowledged", False))}

    def _ack(self, ctx, params, body):
        return self.platform.acknowledge(params["id"])

    def _tick(self, ctx, params, body):
        self._require_owner(ctx)
        if body.get("advance_ms") is not None:
            return self.platform.advance(body["advance_ms"],
                                         step_ms=body.get("step_ms"))
        return self.platform.tick()

    def _receipts(self, ctx, params, body):
        return {"receipts": self.platform.receipts(body.get("recipient"))}

    def _events(self, ctx, params, body):
        return {"events": list(self.platform.events)}

    def _audit_dump(self, ctx, params, body):
        self._require_owner(ctx)
        return {"audit": self.platform.audit_dump(
            redact_wallclock=body.get("redact_wallclock", False))}
