/**
 * Single-page client: a registration wizard with a labeled grid preview,
 * and the three-level click-challenge login. All state is per tab; every
 * server interaction goes through the JSON API sequentially.
 */

import { ApiClient, ApiError } from "./api.js";
import type { Status } from "./grid.js";
import { STATUSES, labelTable, relativeClick } from "./grid.js";

const LEVELS = 3;

type Attrs = Record<string, string>;

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Attrs = {},
  ...children: (Node | string)[]
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) {
    node.setAttribute(key, value);
  }
  for (const child of children) {
    node.append(child);
  }
  return node;
}

/**
 * Labeled 3x3 overlay shown during registration only. Login screens must
 * never include this: there the grid stays invisible.
 */
export function renderPreviewGrid(status: Status): HTMLElement {
  const grid = el("div", { class: "preview-grid", "data-status": status });
  const table = labelTable(status);
  for (let row = 0; row < 3; row += 1) {
    for (let col = 0; col < 3; col += 1) {
      grid.append(
        el(
          "div",
          {
            class: "preview-cell",
            "data-row": String(row),
            "data-col": String(col),
          },
          String(table[row][col]),
        ),
      );
    }
  }
  return grid;
}

interface LevelDraft {
  dataUrl: string | null;
  base64: string | null;
  contentType: string | null;
  status: Status;
}

function readAsDataUrl(file: File): Promise<string> {
  return new Promise((resolve, reject) => {
    const reader = new FileReader();
    reader.onerror = () => reject(reader.error);
    reader.onload = () => resolve(reader.result as string);
    reader.readAsDataURL(file);
  });
}

function statusLabel(status: Status): string {
  return status.replace(/-/g, " ");
}

export function mountApp(root: HTMLElement, api: ApiClient): void {
  root.replaceChildren();
  const banner = el("div", { class: "banner-slot" });
  const nav = el("nav", { class: "tabs" });
  const content = el("main", { class: "content" });
  root.append(banner, nav, content);

  const registerTab = el("button", { class: "tab tab-register", type: "button" }, "Register");
  const loginTab = el("button", { class: "tab tab-login", type: "button" }, "Sign in");
  nav.append(registerTab, loginTab);
  registerTab.addEventListener("click", () => showRegistration());
  loginTab.addEventListener("click", () => showLoginStart());

  // Development affordance: when the server delivers keys via a local
  // transport, say where to look. Transport kind only, never key digits.
  api
    .getConfig()
    .then((config) => {
      if (config.dev_otp_banner) {
        banner.append(
          el(
            "div",
            { class: "dev-banner" },
            `development mode: one-time keys are delivered via the ${config.otp_transport} transport`,
          ),
        );
      }
    })
    .catch(() => {
      // banner is best-effort; the flows work without it
    });

  // ------------------------------------------------------------------
  // Registration wizard

  function showRegistration(): void {
    content.replaceChildren();
    const drafts: LevelDraft[] = Array.from({ length: LEVELS }, () => ({
      dataUrl: null,
      base64: null,
      contentType: null,
      status: "left-to-right",
    }));

    const form = el("form", { class: "register-form" });
    const usernameInput = el("input", {
      class: "reg-username",
      name: "username",
      autocomplete: "username",
      placeholder: "username",
    });
    const usernameError = el("span", { class: "field-error reg-username-error" });
    const mobileInput = el("input", {
      class: "reg-mobile",
      name: "mobile",
      autocomplete: "tel",
      placeholder: "mobile number",
    });
    const formError = el("p", { class: "form-error" });
    const submit = el(
      "button",
      { class: "reg-submit", type: "submit", disabled: "" },
      "Create account",
    );

    form.append(
      el("label", {}, "Username ", usernameInput, usernameError),
      el("label", {}, "Mobile ", mobileInput),
    );

    const previews: HTMLElement[] = [];
    for (let level = 1; level <= LEVELS; level += 1) {
      const draft = drafts[level - 1];
      const fileInput = el("input", {
        class: `reg-file reg-file-${level}`,
        type: "file",
        accept: "image/png,image/jpeg",
      });
      const statusSelect = el("select", { class: `reg-status reg-status-${level}` });
      for (const status of STATUSES) {
        statusSelect.append(el("option", { value: status }, statusLabel(status)));
      }
      const preview = el("div", { class: `level-preview level-preview-${level}` });
      previews.push(preview);

      const renderPreview = () => {
        preview.replaceChildren();
        if (draft.dataUrl) {
          preview.append(
            el("img", { class: "preview-img", src: draft.dataUrl, alt: "" }),
          );
        }
        preview.append(renderPreviewGrid(draft.status));
      };
      renderPreview();

      fileInput.addEventListener("change", () => {
        const file = fileInput.files && fileInput.files[0];
        if (!file) {
          draft.dataUrl = draft.base64 = draft.contentType = null;
        } else {
          void readAsDataUrl(file).then((dataUrl) => {
            draft.dataUrl = dataUrl;
            draft.base64 = dataUrl.slice(dataUrl.indexOf(",") + 1);
            draft.contentType = file.type || "image/png";
            renderPreview();
            refreshSubmit();
          });
          return;
        }
        renderPreview();
        refreshSubmit();
      });
      statusSelect.addEventListener("change", () => {
        draft.status = statusSelect.value as Status;
        renderPreview();
      });

      form.append(
        el(
          "fieldset",
          { class: `level-block level-block-${level}` },
          el("legend", {}, `Level ${level} image`),
          fileInput,
          el("label", {}, "Labeling order ", statusSelect),
          preview,
        ),
      );
    }
    form.append(formError, submit);

    // An incomplete form never reaches the server.
    const complete = () =>
      usernameInput.value.trim() !== "" &&
      mobileInput.value.trim() !== "" &&
      drafts.every((draft) => draft.base64 !== null);
    const refreshSubmit = () => {
      submit.disabled = !complete();
    };
    usernameInput.addEventListener("input", () => {
      usernameError.textContent = "";
      refreshSubmit();
    });
    mobileInput.addEventListener("input", refreshSubmit);

    form.addEventListener("submit", (event) => {
      event.preventDefault();
      if (!complete()) {
        return;
      }
      submit.disabled = true;
      formError.textContent = "";
      void (async () => {
        try {
          const user = await api.createUser(
            usernameInput.value.trim(),
            mobileInput.value.trim(),
          );
          for (let level = 1; level <= LEVELS; level += 1) {
            const draft = drafts[level - 1];
            await api.uploadImage(
              user.user_id,
              level,
              draft.status,
              draft.contentType ?? "image/png",
              draft.base64 ?? "",
            );
          }
          content.replaceChildren(
            el(
              "div",
              { class: "registration-done" },
              el("p", {}, "Account created. You can sign in now."),
              el("button", { class: "goto-login", type: "button" }, "Go to sign in"),
            ),
          );
          content
            .querySelector(".goto-login")
            ?.addEventListener("click", () => showLoginStart());
        } catch (error) {
          if (error instanceof ApiError && error.status === 409) {
            usernameError.textContent = "username already taken";
          } else if (error instanceof ApiError) {
            formError.textContent = error.detail;
          } else {
            formError.textContent = "connection lost, try again";
          }
          refreshSubmit();
        }
      })();
    });

    content.append(form);
  }

  // ------------------------------------------------------------------
  // Login flow

  function showLoginStart(notice?: string): void {
    content.replaceChildren();
    const usernameInput = el("input", {
      class: "login-username",
      autocomplete: "username",
      placeholder: "username",
    });
    const startError = el("p", { class: "form-error login-error" });
    if (notice) {
      startError.textContent = notice;
    }
    const start = el("button", { class: "login-start", type: "button" }, "Start sign in");
    start.addEventListener("click", () => {
      start.disabled = true;
      startError.textContent = "";
      void api
        .startSession(usernameInput.value.trim())
        .then((session) =>
          showChallenge(session.session_id, session.level, session.images),
        )
        .catch((error) => {
          start.disabled = false;
          startError.textContent =
            error instanceof ApiError ? error.detail : "connection lost, try again";
        });
    });
    content.append(
      el("div", { class: "login-begin" }, usernameInput, start, startError),
    );
  }

  function showChallenge(sessionId: string, level: number, images: string[]): void {
    content.replaceChildren();
    // No grid lines, labels, order names, or key digits here: the login
    // screen shows plain images only.
    const grid = el("div", { class: "challenge-grid" });
    for (const imageId of images) {
      const img = el("img", {
        class: "challenge-img",
        "data-image-id": imageId,
        src: api.imageUrl(sessionId, imageId),
        alt: "challenge image",
      });
      img.addEventListener("click", (event) => onChallengeClick(event, img));
      grid.append(img);
    }
    let busy = false;
    const onChallengeClick = (event: MouseEvent, img: HTMLImageElement) => {
      if (busy) {
        return;
      }
      busy = true;
      const box = relativeClick(img, event.clientX, event.clientY);
      void api
        .submitClick(sessionId, {
          image_id: img.dataset.imageId ?? "",
          ...box,
        })
        .then((outcome) => {
          if (outcome.finalize_ready) {
            return api
              .finalize(sessionId)
              .then((verdict) => showResult(verdict.result === "success"));
          }
          showChallenge(sessionId, outcome.level ?? level + 1, outcome.images ?? []);
          return undefined;
        })
        .catch((error) => {
          busy = false;
          if (error instanceof ApiError) {
            showLoginStart("session ended, start over");
          } else {
            showRetryBanner(sessionId);
          }
        });
    };
    content.append(
      el("h2", { class: "level-indicator" }, `Level ${level} of ${LEVELS}`),
      el("p", { class: "challenge-hint" }, "Click the remembered spot on your image."),
      grid,
    );
  }

  /**
   * Network hiccup recovery: never resubmit a click whose fate is unknown.
   * Re-read the session instead and continue from whatever the server
   * actually recorded.
   */
  function showRetryBanner(sessionId: string): void {
    if (content.querySelector(".retry-banner")) {
      return;
    }
    const retry = el("button", { class: "retry-btn", type: "button" }, "Reconnect");
    retry.addEventListener("click", () => {
      void api
        .getSession(sessionId)
        .then((view) => {
          if (view.state === "succeeded") {
            showResult(true);
          } else if (view.state === "failed" || view.state === "expired") {
            showResult(false);
          } else if (view.finalize_ready) {
            return api
              .finalize(sessionId)
              .then((verdict) => showResult(verdict.result === "success"));
          } else {
            showChallenge(sessionId, view.level ?? 1, view.images ?? []);
          }
          return undefined;
        })
        .catch((error) => {
          if (error instanceof ApiError) {
            showLoginStart("session ended, start over");
          }
          // still offline: keep the banner for another try
        });
    });
    content.append(
      el("div", { class: "retry-banner" }, "Connection lost. ", retry),
    );
  }

  // One opaque verdict; a failure never says which step went wrong.
  function showResult(success: boolean): void {
    content.replaceChildren(
      el(
        "div",
        { class: `login-result ${success ? "result-success" : "result-failure"}` },
        el("p", {}, success ? "Login successful." : "Login failed."),
        el("button", { class: "result-restart", type: "button" }, "Back to sign in"),
      ),
    );
    content
      .querySelector(".result-restart")
      ?.addEventListener("click", () => showLoginStart());
  }

  showRegistration();
}

const autoRoot =
  typeof document !== "undefined" ? document.getElementById("app") : null;
if (autoRoot) {
  mountApp(autoRoot, new ApiClient());
}
