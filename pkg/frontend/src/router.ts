// Route table. Reachability is decided in one place (App.navigate): a route
// outside the session's role is never rendered and never linked, mirroring
// the gateway's own permission checks.

import type { Role } from './api';
import type { App } from './app';
import { renderLogin } from './views/login';
import { renderSchedule, renderHistory } from './views/patient';
import { renderDashboard, renderAgenda, renderLabEntry, renderEReports } from './views/doctor';
import {
  renderAdminPatients,
  renderAdminMedications,
  renderAdminLaboratory,
  renderAdminData,
} from './views/admin';

export interface RouteDef {
  hash: string;
  name: string; // becomes data-view on the container
  title: string;
  roles: Role[] | null; // null: public
  render(app: App, container: HTMLElement): Promise<void> | void;
}

export const ROUTES: RouteDef[] = [
  { hash: '#/login', name: 'login', title: 'Sign in', roles: null, render: renderLogin },
  { hash: '#/schedule', name: 'schedule', title: 'Schedule', roles: ['patient'], render: renderSchedule },
  { hash: '#/history', name: 'history', title: 'History', roles: ['patient'], render: renderHistory },
  { hash: '#/dashboard', name: 'dashboard', title: 'Dashboard', roles: ['doctor'], render: renderDashboard },
  { hash: '#/agenda', name: 'agenda', title: 'Agenda', roles: ['doctor'], render: renderAgenda },
  { hash: '#/lab-entry', name: 'lab-entry', title: 'Lab entry', roles: ['doctor'], render: renderLabEntry },
  { hash: '#/ereports', name: 'ereports', title: 'E-reports', roles: ['doctor'], render: renderEReports },
  {
    hash: '#/admin/patients',
    name: 'admin-patients',
    title: 'PATIENT ADMINISTRATION',
    roles: ['admin'],
    render: renderAdminPatients,
  },
  {
    hash: '#/admin/medications',
    name: 'admin-medications',
    title: 'MEDICATIONS ADMINISTRATION',
    roles: ['admin'],
    render: renderAdminMedications,
  },
  {
    hash: '#/admin/laboratory',
    name: 'admin-laboratory',
    title: 'LABORATORY ADMINISTRATION',
    roles: ['admin'],
    render: renderAdminLaboratory,
  },
  {
    hash: '#/admin/data',
    name: 'admin-data',
    title: 'DATA ADMINISTRATION',
    roles: ['admin'],
    render: renderAdminData,
  },
];

export const HOME: Record<Role, string> = {
  patient: '#/schedule',
  doctor: '#/dashboard',
  admin: '#/admin/patients',
};

export const LOGIN_HASH = '#/login';
