/**
 * DOM wiring for the chat app: connect/login screens, conversation list,
 * timeline with left/right bubbles, toolbar actions, group roster.
 * All layout decisions live in render.ts; this file only moves state and
 * attaches listeners.
 */

import type { ChatMessagePayload } from "../protocol.js";
import { GatewayClient, GatewayError } from "./client.js";
import {
  ConversationItem,
  UserRow,
  renderConversationList,
  renderRoster,
  renderTimeline,
  renderToolbar,
  renderUserList,
} from "./render.js";

interface AppState {
  client: GatewayClient | null;
  token: string | null;
  user: string | null;
  conversations: ConversationItem[];
  users: UserRow[];
  activePeer: string | null;
  activeKind: "direct" | "group";
  messages: ChatMessagePayload[];
  members: UserRow[];
}

const state: AppState = {
  client: null,
  token: null,
  user: null,
  conversations: [],
  users: [],
  activePeer: null,
  activeKind: "direct",
  messages: [],
  members: [],
};

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) {
    throw new Error(`missing element #${id}`);
  }
  return node as T;
}

function show(id: string): void {
  for (const screen of document.querySelectorAll<HTMLElement>(".screen")) {
    screen.style.display = screen.id === id ? "" : "none";
  }
}

function banner(text: string, kind = "info"): void {
  const node = el<HTMLElement>("banner");
  node.textContent = text;
  node.className = kind;
  node.style.display = text ? "" : "none";
  if (text) {
    setTimeout(() => {
      node.style.display = "none";
    }, 4000);
  }
}

function authed(extra: Record<string, unknown> = {}): Record<string, unknown> {
  return { token: state.token, ...extra };
}

// ---------------------------------------------------------------------------
// connect screen
// ---------------------------------------------------------------------------

async function loadServers(): Promise<void> {
  const response = await fetch("/api/servers");
  const servers = (await response.json()) as Array<{ display_name: string }>;
  const picker = el<HTMLSelectElement>("server-picker");
  picker.innerHTML =
    `<option value="">default server</option>` +
    servers
      .map((s) => `<option value="${s.display_name}">${s.display_name}</option>`)
      .join("");
}

async function connect(): Promise<void> {
  const scheme = location.protocol === "https:" ? "wss" : "ws";
  const client = await GatewayClient.connect(`${scheme}://${location.host}/`);
  state.client = client;
  client.onEvent = onPush;
  client.onClose = () => banner("connection to the gateway lost", "error");
  const chosen = el<HTMLSelectElement>("server-picker").value;
  await client.call("connect", chosen ? { server: chosen } : {});
  show("screen-auth");
}

// ---------------------------------------------------------------------------
// auth screen
// ---------------------------------------------------------------------------

async function register(): Promise<void> {
  const name = el<HTMLInputElement>("auth-name").value.trim();
  const password = el<HTMLInputElement>("auth-password").value;
  await state.client!.call("register", { name, password });
  banner(`registered ${name}; log in to continue`);
}

async function login(): Promise<void> {
  const name = el<HTMLInputElement>("auth-name").value.trim();
  const password = el<HTMLInputElement>("auth-password").value;
  const value = await state.client!.call<{ token: string }>("login", { name, password });
  state.token = value.token;
  state.user = name;
  el<HTMLElement>("whoami").textContent = name;
  show("screen-main");
  await refreshSidebar();
}

// ---------------------------------------------------------------------------
// sidebar: conversations + users
// ---------------------------------------------------------------------------

async function refreshSidebar(): Promise<void> {
  const client = state.client!;
  const direct = await client.call<{ conversations: ConversationItem[] }>(
    "list-conversations", authed({ kind: "direct" }));
  const groups = await client.call<{ conversations: ConversationItem[] }>(
    "list-conversations", authed({ kind: "group" }));
  state.conversations = [...groups.conversations, ...direct.conversations].sort(
    (a, b) => b.last_message_at - a.last_message_at,
  );
  el<HTMLElement>("conversations").innerHTML = renderConversationList(
    state.conversations, state.activePeer);

  const users = await client.call<{ users: UserRow[] }>("list-users", authed({ filter: "all" }));
  state.users = users.users;
  el<HTMLElement>("users").innerHTML = renderUserList(state.users, state.user);
}

async function openConversation(peer: string, kind: "direct" | "group"): Promise<void> {
  state.activePeer = peer;
  state.activeKind = kind;
  await refreshTimeline();
  await refreshSidebar();
}

async function refreshTimeline(): Promise<void> {
  const client = state.client!;
  const peer = state.activePeer;
  if (!peer) {
    return;
  }
  const history = await client.call<{ messages: ChatMessagePayload[] }>(
    "fetch-history", authed({ peer, limit: 200 }));
  state.messages = history.messages;
  el<HTMLElement>("timeline").innerHTML = renderTimeline(state.messages, state.user ?? "");
  el<HTMLElement>("timeline").scrollTop = el<HTMLElement>("timeline").scrollHeight;

  const status =
    state.activeKind === "direct"
      ? state.users.find((u) => u.user_name === peer)?.status ?? "offline"
      : null;
  const blockedList = await client.call<{ users: UserRow[] }>(
    "list-users", authed({ filter: "blocked" }));
  const blocked = blockedList.users.some((u) => u.user_name === peer);
  el<HTMLElement>("toolbar").innerHTML = renderToolbar({
    peer,
    kind: state.activeKind,
    status,
    blocked,
  });

  const rosterPane = el<HTMLElement>("roster");
  if (state.activeKind === "group") {
    const roster = await client.call<{ members: UserRow[] }>(
      "list-group-members", authed({ group: peer }));
    state.members = roster.members;
    rosterPane.innerHTML = renderRoster(state.members);
    rosterPane.style.display = "";
  } else {
    rosterPane.style.display = "none";
  }
}

// ---------------------------------------------------------------------------
// actions
// ---------------------------------------------------------------------------

async function sendMessage(): Promise<void> {
  const input = el<HTMLInputElement>("composer-input");
  const body = input.value;
  if (!body || !state.activePeer) {
    return;
  }
  await state.client!.call("send-message", authed({ target: state.activePeer, body }));
  input.value = "";
  await refreshTimeline();
}

async function toolbarAction(action: string): Promise<void> {
  const client = state.client!;
  const peer = state.activePeer!;
  if (action === "block") {
    const reason = prompt("reason (optional: spam, harassment, offensive-language, other)") || undefined;
    await client.call("block", authed({ user: peer, ...(reason ? { reason } : {}) }));
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
    el<HTMLElement>("timeline").innerHTML = "";
    el<HTMLElement>("toolbar").innerHTML = "";
    el<HTMLElement>("roster").style.display = "none";
  }
  await refreshSidebar();
  if (state.activePeer) {
    await refreshTimeline();
  }
}

/** Long press (context menu) on a bubble deletes it after confirmation. */
async function deleteBubble(messageId: number): Promise<void> {
  if (!confirm("delete this message for you?")) {
    return;
  }
  await state.client!.call("delete-message", authed({ message_id: messageId }));
  await refreshTimeline();
}

function onPush(event: Record<string, unknown>): void {
  if (event.event === "message") {
    const payload = event.payload as ChatMessagePayload;
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

// ---------------------------------------------------------------------------
// bootstrapping
// ---------------------------------------------------------------------------

function wire(): void {
  el<HTMLButtonElement>("btn-connect").onclick = () => guard(connect());
  el<HTMLButtonElement>("btn-register").onclick = () => guard(register());
  el<HTMLButtonElement>("btn-login").onclick = () => guard(login());
  el<HTMLButtonElement>("btn-send").onclick = () => guard(sendMessage());
  el<HTMLInputElement>("composer-input").onkeydown = (ev) => {
    if (ev.key === "Enter") {
      guard(sendMessage());
    }
  };
  el<HTMLButtonElement>("btn-new-group").onclick = () =>
    guard(
      (async () => {
        const group = prompt("group name?");
        if (group) {
          await state.client!.call("create-group", authed({ group }));
          await refreshSidebar();
          await openConversation(group, "group");
        }
      })(),
    );
  el<HTMLElement>("conversations").onclick = (ev) => {
    const item = (ev.target as HTMLElement).closest<HTMLElement>(".conversation");
    if (item) {
      guard(openConversation(item.dataset.peer!, item.dataset.kind as "direct" | "group"));
    }
  };
  el<HTMLElement>("users").onclick = (ev) => {
    const item = (ev.target as HTMLElement).closest<HTMLElement>(".user");
    if (item) {
      guard(openConversation(item.dataset.user!, "direct"));
    }
  };
  el<HTMLElement>("toolbar").onclick = (ev) => {
    const button = (ev.target as HTMLElement).closest<HTMLButtonElement>("button[data-action]");
    if (button) {
      guard(toolbarAction(button.dataset.action!));
    }
  };
  el<HTMLElement>("timeline").oncontextmenu = (ev) => {
    const bubble = (ev.target as HTMLElement).closest<HTMLElement>(".bubble");
    if (bubble) {
      ev.preventDefault();
      guard(deleteBubble(Number(bubble.dataset.messageId)));
    }
  };
  guard(loadServers());
  show("screen-connect");
}

function guard(p: Promise<unknown>): void {
  p.catch((err) => {
    banner(err instanceof GatewayError ? err.code : String(err), "error");
  });
}

wire();
