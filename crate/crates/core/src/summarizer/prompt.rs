//! Few-shot summarization prompt.

use crate::corpus::Conversation;

const INSTRUCTION: &str = "You are shown a conversation between a virtual assistant on a phone and a user. \
You have to summarise what the user wants at this particular point of the conversation. \
You summary should contain the user intent and the slots he mentioned. \
However, the summary should be a delexicalized abstrast sentence, which means it should not contain actual slot values. \
Note that it is possible that not all conversation history is relevant and you need to summarise based on what is relevant to the most recent user turn. \
If the user does not have a goal at this point or his goal gets completed by the system, \
just summarize that \"The user wants nothing more\".";

const FIRST_EXAMPLE: &str = "<fictional_example>
USER: make an alarm for 6
SYSTEM: I have created an alarm at 6
USER: Also, send a message to my wife
SYSTEM: What would you like the message to say?
USER: ehm... happy birthday
SYSTEM: I can do that. What message service do you want to use
USER: whatsapp

What does the user want at this point in the conversation?
The user wants to send a message to a recipient with a given text using a specified app
</fictional_example>";

const SECOND_EXAMPLE: &str = "<fictional_example>
USER: make an alarm for 6
SYSTEM: I have created an alarm at 6
USER: thanks you and goodbye

What does the user want at this point in the conversation?
The user wants nothing more
</fictional_example>";

pub const QUESTION: &str = "What does the user want at this point in the conversation?";

/// Renders the summarization prompt for `conversation`.
pub fn render_prompt(conversation: &Conversation) -> String {
    format!(
        "{INSTRUCTION}\n\n{FIRST_EXAMPLE}\n\n{SECOND_EXAMPLE}\n\nNow it's your turn.\n\n{}\n{QUESTION}",
        conversation.transcript()
    )
}
