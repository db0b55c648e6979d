import { ApiError, Client, Role } from './api';
import { deriveIdentity, Identity, signLogin, signPrepared } from './keystore';
import { HOME, LOGIN_HASH, ROUTES, RouteDef } from './router';
import { banner, clear, el, shortAddress } from './ui';

export interface Session {
  address: string;
  role: Role;
  token: string;
  identity: Identity;
}

const PHRASE_KEY = 'medledger.phrase';
const TOKEN_KEY = 'medledger.token';

export class App {
  session: Session | null = null;
  readonly nav: HTMLElement;
  readonly view: HTMLElement;
  private renderedHash = '';

  constructor(
    readonly root: HTMLElement,
    readonly api: Client,
  ) {
    this.nav = el('header', { id: 'nav' });
    this.view = el('main', { id: 'view' });
    clear(root);
    root.append(this.nav, this.view);
  }

  private readonly onHashChange = (): void => {
    if (window.location.hash !== this.renderedHash) {
      void this.navigate(window.location.hash);
    }
  };

  async start(): Promise<void> {
    window.addEventListener('hashchange', this.onHashChange);
    await this.restore();
    await this.navigate(window.location.hash || LOGIN_HASH);
  }

  stop(): void {
    window.removeEventListener('hashchange', this.onHashChange);
  }

  // Resume a session after a reload. The key phrase lives in sessionStorage
  // (demo custody: this tab only, gone when it closes) — never in requests.
  private async restore(): Promise<void> {
    const phrase = sessionStorage.getItem(PHRASE_KEY);
    const token = sessionStorage.getItem(TOKEN_KEY);
    if (!phrase || !token) return;
    const identity = deriveIdentity(phrase);
    this.api.token = token;
    this.api.signer = bytes => signPrepared(identity, bytes);
    try {
      const account = await this.api.profile();
      this.session = { address: account.address, role: account.role, token, identity };
    } catch {
      this.dropSession();
    }
  }

  async signIn(phrase: string): Promise<Session> {
    const identity = deriveIdentity(phrase);
    const challenge = await this.api.challenge(identity.address);
    const signature = signLogin(identity, challenge.nonce);
    const granted = await this.api.login(identity.address, signature);
    this.api.token = granted.token;
    this.api.signer = bytes => signPrepared(identity, bytes);
    this.session = {
      address: granted.address,
      role: granted.role,
      token: granted.token,
      identity,
    };
    sessionStorage.setItem(PHRASE_KEY, phrase);
    sessionStorage.setItem(TOKEN_KEY, granted.token);
    return this.session;
  }

  async signOut(): Promise<void> {
    try {
      await this.api.logout();
    } catch {
      // token may already be dead; local cleanup still applies
    }
    this.dropSession();
    await this.navigate(LOGIN_HASH);
  }

  private dropSession(): void {
    this.session = null;
    this.api.token = null;
    this.api.signer = null;
    sessionStorage.removeItem(PHRASE_KEY);
    sessionStorage.removeItem(TOKEN_KEY);
  }

  homeHash(): string {
    return this.session ? HOME[this.session.role] : LOGIN_HASH;
  }

  visibleRoutes(): RouteDef[] {
    return ROUTES.filter(route =>
      route.roles === null
        ? this.session === null
        : this.session !== null && route.roles.includes(this.session.role),
    );
  }

  // Role guard: unknown hashes fall back home, role-gated routes outside the
  // session's role redirect away (and the address bar is corrected).
  private resolve(hash: string): RouteDef {
    const requested = ROUTES.find(route => route.hash === hash);
    if (!requested) return this.routeFor(this.homeHash());
    if (requested.roles === null) return requested;
    if (!this.session) return this.routeFor(LOGIN_HASH);
    if (!requested.roles.includes(this.session.role)) return this.routeFor(this.homeHash());
    return requested;
  }

  private routeFor(hash: string): RouteDef {
    const route = ROUTES.find(candidate => candidate.hash === hash);
    if (!route) throw new Error(`no route for ${hash}`);
    return route;
  }

  // Navigations are serialized so a slow render can never interleave with
  // the next one (clicks and hashchange events may overlap).
  private chain: Promise<void> = Promise.resolve();

  navigate(hash: string): Promise<void> {
    const run = this.chain.then(() => this.renderRoute(hash));
    this.chain = run.then(
      () => undefined,
      () => undefined,
    );
    return run;
  }

  private async renderRoute(hash: string): Promise<void> {
    const route = this.resolve(hash);
    this.renderedHash = route.hash;
    if (window.location.hash !== route.hash) {
      window.location.hash = route.hash;
    }
    this.renderNav(route);
    clear(this.view);
    this.view.dataset.view = route.name;
    try {
      await route.render(this, this.view);
    } catch (error) {
      if (error instanceof ApiError && error.status === 401 && this.session) {
        this.dropSession();
        await this.renderRoute(LOGIN_HASH);
        return;
      }
      const detail = error instanceof ApiError ? error.message : String(error);
      this.view.append(banner('error', `failed to load this view — ${detail}`));
    }
  }

  private renderNav(active: RouteDef): void {
    clear(this.nav);
    const brand = el('span', { class: 'brand' }, 'medledger');
    const tabs = el('nav', { class: 'tabs' });
    for (const route of this.visibleRoutes()) {
      const link = el('a', { href: route.hash, class: 'tab' }, route.title);
      if (route.hash === active.hash) link.setAttribute('aria-current', 'page');
      tabs.append(link);
    }
    this.nav.append(brand, tabs);
    if (this.session) {
      const who = el(
        'span',
        { class: 'whoami' },
        `${this.session.role} ${shortAddress(this.session.address)}`,
      );
      const signOut = el('button', { type: 'button', id: 'sign-out' }, 'Sign out');
      signOut.addEventListener('click', () => void this.signOut());
      this.nav.append(who, signOut);
    }
  }
}

export function createApp(root: HTMLElement, baseUrl = ''): App {
  return new App(root, new Client(baseUrl));
}
