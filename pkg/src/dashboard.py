import dash
from dash import dcc, html
from dash.dependencies import Input, Output
import pandas as pd
import os
import json
import plotly.graph_objs as go
import logging

from src.harness import CHECKPOINT_NAME, LOSS_LOG_NAME
from src.report import METRIC_KEYS, create_loss_chart


def create_app(run_dir):
    """Dash app that re-reads a run directory every 30 seconds"""
    app = dash.Dash(__name__)
    app.title = "Gated S2R Run Monitor"

    app.layout = html.Div([
        html.H1("Syn-to-Real Crossing Prediction Run Monitor"),

        html.Div([
            html.Div([
                html.H3("Run Settings"),
                html.Div(id='run-settings'),
            ], className='dashboard-card'),

            html.Div([
                html.H3("Test Metrics"),
                html.Div(id='metrics-panel'),
            ], className='dashboard-card'),
        ], style={'display': 'flex', 'justify-content': 'space-between'}),

        html.Div([
            html.H3("Loss Curves"),
            dcc.Graph(id='loss-chart'),
        ], className='dashboard-card'),

        html.Div([
            html.H3("Gate Weights"),
            dcc.Graph(id='gate-chart'),
        ], className='dashboard-card'),

        dcc.Interval(
            id='interval-component',
            interval=30*1000,  # Update every 30 seconds
            n_intervals=0
        )
    ])

    @app.callback(
        [Output('run-settings', 'children'),
         Output('metrics-panel', 'children'),
         Output('loss-chart', 'figure'),
         Output('gate-chart', 'figure')],
        [Input('interval-component', 'n_intervals')]
    )
    def update_dashboard(n):
        return refresh(run_dir)

    app.index_string = INDEX_TEMPLATE
    return app


def refresh(run_dir):
    loss_log = load_loss_log(run_dir)
    return (
        create_settings_panel(run_dir),
        create_metrics_panel(load_metrics(run_dir)),
        create_loss_figure(loss_log),
        create_gate_chart(loss_log),
    )


def load_loss_log(run_dir):
    try:
        path = os.path.join(run_dir, LOSS_LOG_NAME)
        if not os.path.exists(path):
            return pd.DataFrame()
        return pd.read_csv(path)
    except Exception as e:
        logging.error(f"Error loading loss log: {str(e)}")
        return pd.DataFrame()


def load_metrics(run_dir):
    try:
        path = os.path.join(run_dir, 'metrics.json')
        if not os.path.exists(path):
            return {}
        with open(path, 'r') as f:
            return json.load(f)
    except Exception as e:
        logging.error(f"Error loading metrics: {str(e)}")
        return {}


def create_settings_panel(run_dir):
    checkpoint = os.path.join(run_dir, CHECKPOINT_NAME)
    if not os.path.exists(checkpoint):
        return html.Div([html.P(f"Run directory: {run_dir}"), html.P("No checkpoint written yet.")])
    size_kb = os.path.getsize(checkpoint) / 1024
    return html.Div([
        html.P(f"Run directory: {run_dir}"),
        html.P(f"Checkpoint: {size_kb:.0f} KiB"),
    ])


def create_metrics_panel(metrics):
    if not metrics:
        return html.Div([
            html.P("No evaluation yet."),
            html.P("Run the eval command to fill this panel...")
        ])
    rows = [html.P(f"Mode: {metrics.get('mode')}", style={'fontWeight': 'bold'}),
            html.P(f"Test clips: {metrics.get('n_samples')}")]
    for key in METRIC_KEYS:
        value = metrics.get(key)
        if value is not None:
            rows.append(html.P(f"{key}: {value:.4f}"))
    return html.Div(rows)


def create_loss_figure(loss_log):
    try:
        if loss_log.empty:
            return {
                'data': [],
                'layout': go.Layout(title='No epochs logged yet')
            }
        return create_loss_chart(loss_log)
    except Exception as e:
        logging.error(f"Error creating loss chart: {str(e)}")
        return {
            'data': [],
            'layout': go.Layout(title='Error creating loss chart')
        }


def create_gate_chart(loss_log):
    columns = [c for c in ('w_s', 'w_st', 'w_real') if c in loss_log.columns]
    if loss_log.empty or not columns:
        return {
            'data': [],
            'layout': go.Layout(title='No gate weights logged yet')
        }
    fig = go.Figure()
    for column in columns:
        fig.add_trace(go.Scatter(x=loss_log['epoch'], y=loss_log[column], mode='lines+markers', name=column))
    fig.update_layout(title='Mean gate weight per epoch', xaxis_title='Epoch', yaxis_title='Weight',
                      yaxis_range=[0, 1])
    return fig


# Add CSS for better styling
INDEX_TEMPLATE = '''
<!DOCTYPE html>
<html>
    <head>
        {%metas%}
        <title>Gated S2R Run Monitor</title>
        {%favicon%}
        {%css%}
        <style>
            body {
                font-family: Arial, sans-serif;
                margin: 0;
                padding: 20px;
                background-color: #f5f5f5;
            }
            .dashboard-card {
                background-color: white;
                border-radius: 5px;
                box-shadow: 0 2px 4px rgba(0, 0, 0, 0.1);
                padding: 15px;
                margin-bottom: 20px;
            }
            h1 {
                color: #2c3e50;
            }
            h3 {
                color: #34495e;
                margin-top: 0;
            }
        </style>
    </head>
    <body>
        {%app_entry%}
        <footer>
            {%config%}
            {%scripts%}
            {%renderer%}
        </footer>
    </body>
</html>
'''


def run_dashboard(run_dir, port=8050, debug=False):
    logging.info(f"Starting run monitor for {run_dir}")
    app = create_app(run_dir)
    app.run(debug=debug, port=port)
