/**
 * Pure view builders: state in, HTML string out.  No DOM access here, so
 * the timeline/list layout rules are unit-testable in Node.
 */

import type { ChatMessagePayload } from "../protocol.js";

export interface ConversationItem {
  peer: string;
  kind: "direct" | "group";
  last_message_at: number;
}

export interface UserRow {
  user_name: string;
  status: string; // online | offline | hidden
}

export function escapeHtml(text: string): string {
  return text
    .replaceAll("&", "&amp;")
    .replaceAll("<", "&lt;")
    .replaceAll(">", "&gt;")
    .replaceAll('"', "&quot;")
    .replaceAll("'", "&#39;");
}

export function formatTimestamp(ms: number): string {
  const d = new Date(ms);
  const pad = (n: number) => String(n).padStart(2, "0");
  return (
    `${d.getFullYear()}-${pad(d.getMonth() + 1)}-${pad(d.getDate())} ` +
    `${pad(d.getHours())}:${pad(d.getMinutes())}:${pad(d.getSeconds())}`
  );
}

/**
 * Received messages sit on the left, own messages on the right, every
 * bubble stamped with its date and time.
 */
export function renderTimeline(messages: ChatMessagePayload[], selfName: string): string {
  const ordered = [...messages].sort((a, b) => a.message_id - b.message_id);
  return ordered
    .map((m) => {
      const side = m.sender === selfName ? "right" : "left";
      return (
        `<div class="bubble ${side}" data-message-id="${m.message_id}">` +
        `<span class="meta">${formatTimestamp(m.sent_at)} · ${escapeHtml(m.sender)}</span>` +
        `<span class="body">${escapeHtml(m.body)}</span>` +
        `</div>`
      );
    })
    .join("");
}

export function renderConversationList(
  conversations: ConversationItem[],
  activePeer: string | null,
): string {
  if (!conversations.length) {
    return `<div class="empty">no conversations yet</div>`;
  }
  return conversations
    .map((c) => {
      const active = c.peer === activePeer ? " active" : "";
      const badge = c.kind === "group" ? "#" : "@";
      return (
        `<div class="conversation${active}" data-peer="${escapeHtml(c.peer)}" data-kind="${c.kind}">` +
        `<span class="badge">${badge}</span>` +
        `<span class="name">${escapeHtml(c.peer)}</span>` +
        `<span class="when">${formatTimestamp(c.last_message_at)}</span>` +
        `</div>`
      );
    })
    .join("");
}

/** Status is rendered verbatim; a blocked peer arrives as "hidden". */
export function renderUserList(users: UserRow[], selfName: string | null): string {
  return users
    .filter((u) => u.user_name !== selfName)
    .map(
      (u) =>
        `<div class="user" data-user="${escapeHtml(u.user_name)}">` +
        `<span class="name">${escapeHtml(u.user_name)}</span>` +
        `<span class="status status-${escapeHtml(u.status)}">${escapeHtml(u.status)}</span>` +
        `</div>`,
    )
    .join("");
}

export function renderRoster(members: UserRow[]): string {
  return (
    `<div class="roster-title">members</div>` +
    members
      .map(
        (m) =>
          `<div class="member">` +
          `<span class="name">${escapeHtml(m.user_name)}</span>` +
          `<span class="status status-${escapeHtml(m.status)}">${escapeHtml(m.status)}</span>` +
          `</div>`,
      )
      .join("")
  );
}

export interface ToolbarState {
  peer: string;
  kind: "direct" | "group";
  status: string | null; // peer's status for direct chats; null for groups
  blocked: boolean;      // caller has blocked this peer
}

/**
 * Direct chats: peer name, add-to-group, block/unblock, delete-conversation.
 * Group chats: group name, add-member and leave controls (roster rendered
 * separately).
 */
export function renderToolbar(state: ToolbarState): string {
  const title =
    `<span class="peer-name">${escapeHtml(state.peer)}</span>` +
    (state.kind === "direct" && state.status !== null
      ? `<span class="status status-${escapeHtml(state.status)}">${escapeHtml(state.status)}</span>`
      : "");
  if (state.kind === "group") {
    return (
      title +
      `<button data-action="add-member">add member</button>` +
      `<button data-action="leave">leave group</button>`
    );
  }
  return (
    title +
    `<button data-action="add-to-group">add to group</button>` +
    `<button data-action="${state.blocked ? "unblock" : "block"}">` +
    `${state.blocked ? "unblock" : "block"}</button>` +
    `<button data-action="delete-conversation">delete conversation</button>`
  );
}
