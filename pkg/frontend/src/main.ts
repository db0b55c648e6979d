import './styles.css';
import { createApp } from './app';

const app = createApp(document.getElementById('app')!);
void app.start();
