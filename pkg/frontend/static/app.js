"use strict";
(() => {
  // src/ui/client.ts
  var GatewayError = class extends Error {
    constructor(code) {
      super(code);
      this.code = code;
    }
    code;
  };
  var GatewayClient = class _GatewayClient {
    constructor(socket) {
      this.socket = socket;
      socket.onmessage = (ev) => this.onMessage(String(ev.data));
      socket.onclose = () => {
        for (const pending of this.queue.splice(0)) {
          pending.reject(new GatewayError("ConnectionClosed"));
        }
        this.onClose?.();
      };
    }
    socket;
    queue = [];
    onEvent = null;
    onClose = null;
    static connect(url) {
      return new Promise((resolve, reject) => {
        const socket = new WebSocket(url);
        socket.onopen = () => resolve(new _GatewayClient(socket));
        socket.onerror = () => reject(new GatewayError("ConnectionFailed"));
      });
    }
    onMessage(raw) {
      let body;
      try {
        body = JSON.parse(raw);
      } catch {
        return;
      }
      if ("event" in body) {
        this.onEvent?.(body);
        return;
      }
      const pending = this.queue.shift();
      if (!pending) {
        return;
      }
      const reply = body;
      if (reply.ok) {
        pending.resolve(reply.value ?? {});
      } else {
        pending.reject(new GatewayError(String(reply.error ?? "Error")));
      }
    }
    call(op, args = {}) {
      return new Promise((resolve, reject) => {
        this.queue.push({ resolve: (v) => resolve(v), reject });
        this.socket.send(JSON.stringify({ op, args }));
      });
    }
    close() {
      this.socket.close();
    }
  };

  // src/ui/render.ts
  function escapeHtml(text) {
    return text.replaceAll("&", "&amp;").replaceAll("<", "&lt;").replaceAll(">", "&gt;").replaceAll('"', "&quot;").replaceAll("'", "&#39;");
  }
  function formatTimestamp(ms) {
    const d = new Date(ms);
    const pad = (n) => String(n).padStart(2, "0");
    return `${d.getFullYear()}-${pad(d.getMonth() + 1)}-${pad(d.getDate())} ${pad(d.getHours())}:${pad(d.getMinutes())}:${pad(d.getSeconds())}`;
  }
  function renderTimeline(messages, selfName) {
    const ordered = [...messages].sort((a, b) => a.message_id - b.message_id);
    return ordered.map((m) => {
      const side = m.sender === selfName ? "right" : "left";
      return `<div class="bubble ${side}" data-message-id="${m.message_id}"><span class="meta">${formatTimestamp(m.sent_at)} \xB7 ${escapeHtml(m.sender)}</span><span class="body">${escapeHtml(m.body)}</span></div>`;
    }).join("");
  }
  function renderConversationList(conversations, activePeer) {
    if (!conversations.length) {
      return `<div class="empty">no conversations yet</div>`;
    }
    return conversations.map((c) => {
      const active = c.peer === activePeer ? " active" : "";
      const badge = c.kind === "group" ? "#" : "@";
      return `<div class="conversation${active}" data-peer="${escapeHtml(c.peer)}" data-kind="${c.kind}"><span class="badge">${badge}</span><span class="name">${escapeHtml(c.peer)}</span><span class="when">${formatTimestamp(c.last_message_at)}</span></div>`;
    }).join("");
  }
  function renderUserList(users, selfName) {
    return users.filter((u) => u.user_name !== selfName).map(
      (u) => `<div class="user" data-user="${escapeHtml(u.user_name)}"><span class="name">${escapeHtml(u.user_name)}</span><span class="status status-${escapeHtml(u.status)}">${escapeHtml(u.status)}</span></div>`
    ).join("");
  }
  function renderRoster(members) {
    return `<div class="roster-title">members</div>` + members.map(
      (m) => `<div class="member"><span class="name">${escapeHtml(m.user_name)}</span><span class="status status-${escapeHtml(m.status)}">${escapeHtml(m.status)}</span></div>`
    ).join("");
  }
  function renderToolbar(state2) {
    const title = `<span class="peer-name">${escapeHtml(state2.peer)}</span>` + (state2.kind === "direct" && state2.status !== null ? `<span class="status status-${escapeHtml(state2.status)}">${escapeHtml(state2.status)}</span>` : "");
    if (state2.kind === "group") {
      return title + `<button data-action="add-member">add member</button><button data-action="leave">leave group</button>`;
    }
    return title + `<button data-action="add-to-group">add to group</button><button data-action="${state2.blocked ? "unblock" : "block"}">${state2.blocked ? "unblock" : "block"}</button><button data-action="delete-conversation">delete conversation</button>`;
  }

  // src/ui/app.ts
  var state = {
    client: null,
    token: null,
    user: null,
    conversations: [],
    users: [],
    activePeer: null,
    activeKind: "direct",
    messages: [],
    members: []
  };
  function el(id) {
    const node = document.getElementById(id);
    if (!node) {
      throw new Error(`missing element #${id}`);
    }
    return node;
  }
  function show(id) {
    for (const screen of document.querySelectorAll(".screen")) {
      screen.style.display = screen.id === id ? "" : "none";
    }
  }
  function banner(text, kind = "info") {
    const node = el("banner");
    node.textContent = text;
    node.className = kind;
    node.style.display = text ? "" : "none";
    if (text) {
      setTimeout(() => {
        node.style.display = "none";
      }, 4e3);
    }
  }
  function authed(extra = {}) {
    return { token: state.token, ...extra };
  }
  async function loadServers() {
    const response = await fetch("/api/servers");
    const servers = await response.json();
    const picker = el("server-picker");
    picker.innerHTML = `<option value="">default server</option>` + servers.map((s) => `<option value="${s.display_name}">${s.display_name}</option>`).join("");
  }
  async function connect() {
    const scheme = location.protocol === "https:" ? "wss" : "ws";
    const client = await GatewayClient.connect(`${scheme}://${location.host}/`);
    state.client = client;
    client.onEvent = onPush;
    client.onClose = () => banner("connection to the gateway lost", "error");
    const chosen = el("server-picker").value;
    await client.call("connect", chosen ? { server: chosen } : {});
    show("screen-auth");
  }
  async function register() {
    const name = el("auth-name").value.trim();
    const password = el("auth-password").value;
    await state.client.call("register", { name, password });
    banner(`registered ${name}; log in to continue`);
  }
  async function login() {
    const name = el("auth-name").value.trim();
    const password = el("auth-password").value;
    const value = await state.client.call("login", { name, password });
    state.token = value.token;
    state.user = name;
    el("whoami").textContent = name;
    show("screen-main");
    await refreshSidebar();
  }
  async function refreshSidebar() {
    const client = state.client;
    const direct = await client.call(
      "list-conversations",
      authed({ kind: "direct" })
    );
    const groups = await client.call(
      "list-conversations",
      authed({ kind: "group" })
    );
    state.conversations = [...groups.conversations, ...direct.conversations].sort(
      (a, b) => b.last_message_at - a.last_message_at
    );
    el("conversations").innerHTML = renderConversationList(
      state.conversations,
      state.activePeer
    );
    const users = await client.call("list-users", authed({ filter: "all" }));
    state.users = users.users;
    el("users").innerHTML = renderUserList(state.users, state.user);
  }
  async function openConversation(peer, kind) {
    state.activePeer = peer;
    state.activeKind = kind;
    await refreshTimeline();
    await refreshSidebar();
  }
  async function refreshTimeline() {
    const client = state.client;
    const peer = state.activePeer;
    if (!peer) {
      return;
    }
    const history = await client.call(
      "fetch-history",
      authed({ peer, limit: 200 })
    );
    state.messages = history.messages;
    el("timeline").innerHTML = renderTimeline(state.messages, state.user ?? "");
    el("timeline").scrollTop = el("timeline").scrollHeight;
    const status = state.activeKind === "direct" ? state.users.find((u) => u.user_name === peer)?.status ?? "offline" : null;
    const blockedList = await client.call(
      "list-users",
      authed({ filter: "blocked" })
    );
    const blocked = blockedList.users.some((u) => u.user_name === peer);
    el("toolbar").innerHTML = renderToolbar({
      peer,
      kind: state.activeKind,
      status,
      blocked
    });
    const rosterPane = el("roster");
    if (state.activeKind === "group") {
      const roster = await client.call(
        "list-group-members",
        authed({ group: peer })
      );
      state.members = roster.members;
      rosterPane.innerHTML = renderRoster(state.members);
      rosterPane.style.display = "";
    } else {
      rosterPane.style.display = "none";
    }
  }
  async function sendMessage() {
    const input = el("composer-input");
    const body = input.value;
    if (!body || !state.activePeer) {
      return;
    }
    await state.client.call("send-message", authed({ target: state.activePeer, body }));
    input.value = "";
    await refreshTimeline();
  }
  async function toolbarAction(action) {
    const client = state.client;
    const peer = state.activePeer;
    if (action === "block") {
      const reason = prompt("reason (optional: spam, harassment, offensive-language, other)") || void 0;
      await client.call("block", authed({ user: peer, ...reason ? { reason } : {} }));
      banner(`${peer} blocked`);
    } else if (action === "unblock") {
      await client.call("unblock", authed({ user: peer }));
      banner(`${peer} unblocked`);
    } else if (action === "add-to-group") {
      const group = prompt("add to which group?");
      if (group) {
        await client.call("add-to-group", authed({ user: peer, group }));
        banner(`${peer} added to ${group}`);
      }
    } else if (action === "delete-conversation") {
      if (confirm(`delete the whole conversation with ${peer}?`)) {
        await client.call("delete-conversation", authed({ peer }));
      }
    } else if (action === "add-member") {
      const user = prompt("add which user?");
      if (user) {
        await client.call("add-to-group", authed({ user, group: peer }));
      }
    } else if (action === "leave") {
      await client.call("leave-group", authed({ group: peer }));
      state.activePeer = null;
      el("timeline").innerHTML = "";
      el("toolbar").innerHTML = "";
      el("roster").style.display = "none";
    }
    await refreshSidebar();
    if (state.activePeer) {
      await refreshTimeline();
    }
  }
  async function deleteBubble(messageId) {
    if (!confirm("delete this message for you?")) {
      return;
    }
    await state.client.call("delete-message", authed({ message_id: messageId }));
    await refreshTimeline();
  }
  function onPush(event) {
    if (event.event === "message") {
      const payload = event.payload;
      const peer = payload.target_kind === "group" ? payload.target : payload.sender;
      if (peer === state.activePeer) {
        void refreshTimeline();
      } else {
        banner(`new message from ${payload.sender}`);
      }
      void refreshSidebar();
    } else if (event.event === "auto-block") {
      banner(`you were blocked automatically (trigger: ${String(event.trigger)})`, "error");
    } else if (event.event === "crisis") {
      banner(`crisis alert: added to ${String(event.group)}`, "error");
      void refreshSidebar();
    } else if (event.event === "upstream-down") {
      banner("the platform went away; reconnect later", "error");
    }
  }
  function wire() {
    el("btn-connect").onclick = () => guard(connect());
    el("btn-register").onclick = () => guard(register());
    el("btn-login").onclick = () => guard(login());
    el("btn-send").onclick = () => guard(sendMessage());
    el("composer-input").onkeydown = (ev) => {
      if (ev.key === "Enter") {
        guard(sendMessage());
      }
    };
    el("btn-new-group").onclick = () => guard(
      (async () => {
        const group = prompt("group name?");
        if (group) {
          await state.client.call("create-group", authed({ group }));
          await refreshSidebar();
          await openConversation(group, "group");
        }
      })()
    );
    el("conversations").onclick = (ev) => {
      const item = ev.target.closest(".conversation");
      if (item) {
        guard(openConversation(item.dataset.peer, item.dataset.kind));
      }
    };
    el("users").onclick = (ev) => {
      const item = ev.target.closest(".user");
      if (item) {
        guard(openConversation(item.dataset.user, "direct"));
      }
    };
    el("toolbar").onclick = (ev) => {
      const button = ev.target.closest("button[data-action]");
      if (button) {
        guard(toolbarAction(button.dataset.action));
      }
    };
    el("timeline").oncontextmenu = (ev) => {
      const bubble = ev.target.closest(".bubble");
      if (bubble) {
        ev.preventDefault();
        guard(deleteBubble(Number(bubble.dataset.messageId)));
      }
    };
    guard(loadServers());
    show("screen-connect");
  }
  function guard(p) {
    p.catch((err) => {
      banner(err instanceof GatewayError ? err.code : String(err), "error");
    });
  }
  wire();
})();
